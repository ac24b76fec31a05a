"""Shared value types, parameter validation, grids and trapezoid quadrature."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr

SQRT_2PI = math.sqrt(2.0 * math.pi)

# JSON key -> dataclass attribute; "lambda" is a Python keyword.
_PARAM_KEYS = {
    "M": "M",
    "m": "m",
    "hbar": "hbar",
    "lambda": "lam",
    "epsilon": "epsilon",
    "sigma_C": "sigma_C",
    "sigma_Q": "sigma_Q",
    "q0": "q0",
}


class ParameterError(ValueError):
    """Raised by :func:`validate_params` with every violated invariant."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("invalid parameters: " + "; ".join(self.violations))


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the pointer / particle measurement model.

    Attributes
    ----------
    M, m : float
        Pointer mass and quantum particle mass.
    hbar : float
        Reduced Planck constant in the chosen units.
    lam : float
        Coupling rate, the constant value of the interaction strength
        while the apparatus is switched on (JSON key ``"lambda"``).
    epsilon : float
        Duration of the interaction window ``(0, epsilon]``.
    sigma_C, sigma_Q : float
        Initial pointer width and width of each quantum packet.
    q0 : float
        Half separation of the two quantum packets.
    """

    M: float = 1.0
    m: float = 1.0
    hbar: float = 1.0
    lam: float = 1.0
    epsilon: float = 0.01
    sigma_C: float = 0.05
    sigma_Q: float = 0.1
    q0: float = 1.0

    @property
    def well_separated(self) -> bool:
        return self.sigma_C < self.q0

    def k_end(self) -> float:
        """Integrated interaction strength at the end of the window."""
        return self.lam * self.epsilon

    def with_(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {key: float(getattr(self, attr)) for key, attr in _PARAM_KEYS.items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "PhysicalParams":
        unknown = set(data) - set(_PARAM_KEYS)
        missing = set(_PARAM_KEYS) - set(data)
        if unknown or missing:
            problems = []
            if unknown:
                problems.append(f"unknown keys {sorted(unknown)}")
            if missing:
                problems.append(f"missing keys {sorted(missing)}")
            raise ValueError("PhysicalParams JSON: " + ", ".join(problems))
        return cls(**{_PARAM_KEYS[k]: float(v) for k, v in data.items()})

    @classmethod
    def from_json(cls, text: str) -> "PhysicalParams":
        return cls.from_dict(json.loads(text))


# Desk-scale values chosen for this package; not taken from any measurement.
DESK_DEFAULTS = PhysicalParams()

# Same k(epsilon) = 0.01 as DESK_DEFAULTS, reached with a 100x stronger coupling
# over a 100x shorter window, so epsilon << 2 m sigma_Q^2 / hbar.
STRONG_COUPLING = PhysicalParams(lam=100.0, epsilon=1e-4)

PRESETS = {"desk": DESK_DEFAULTS, "strong": STRONG_COUPLING}


def validate_params(p: PhysicalParams) -> PhysicalParams:
    """Return ``p`` unchanged if it is physically admissible.

    All violations are collected before raising, so the error lists every
    offending field at once.
    """
    violations = []
    if not (p.M > 0):
        violations.append("NonPositiveMass: M must be > 0")
    if not (p.m > 0):
        violations.append("NonPositiveMass: m must be > 0")
    if not (p.hbar >= 0):
        violations.append("NegativeHbar: hbar must be >= 0")
    if not (p.lam != 0) or not math.isfinite(p.lam):
        violations.append("ZeroCoupling: lambda must be finite and non-zero")
    if not (p.epsilon > 0):
        violations.append("NonPositiveDuration: epsilon must be > 0")
    if not (p.sigma_C > 0):
        violations.append("NonPositiveWidth: sigma_C must be > 0")
    if not (p.sigma_Q > 0):
        violations.append("NonPositiveWidth: sigma_Q must be > 0")
    if not (p.q0 >= 0):
        violations.append("NegativeSeparation: q0 must be >= 0")
    if violations:
        raise ParameterError(violations)
    return p


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"grid needs an integer n >= 2, got {self.n}")
        if not self.hi > self.lo:
            raise ValueError(f"grid bounds must increase, got [{self.lo}, {self.hi}]")

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @classmethod
    def covering(cls, mixture: "GaussianMixture1D", n: int, nsigma: float = 8.0) -> "Grid1D":
        """Grid spanning every component's mean +- ``nsigma`` sigma."""
        lo = min(c.mean - nsigma * c.sigma for c in mixture.components)
        hi = max(c.mean + nsigma * c.sigma for c in mixture.components)
        return cls(lo, hi, n)

    @classmethod
    def symmetric(cls, half_width: float, n: int) -> "Grid1D":
        return cls(-half_width, half_width, n)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product grid; arrays are indexed ``[ix, iq]``."""

    x: Grid1D
    q: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.n, self.q.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x.points, self.q.points, indexing="ij")


def _trapz_weights(grid: Grid1D) -> np.ndarray:
    w = np.full(grid.n, grid.spacing)
    w[0] = w[-1] = 0.5 * grid.spacing
    return w


def integrate_1d(f, grid: Grid1D) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n,):
        raise GridMismatch(f"field of shape {f.shape} on grid of {grid.n} points")
    return float(np.trapezoid(f, dx=grid.spacing))


def integrate_2d(f, grid: Grid2D) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise GridMismatch(f"field of shape {f.shape} on grid of shape {grid.shape}")
    return float(_trapz_weights(grid.x) @ f @ _trapz_weights(grid.q))


def l1_distance_1d(f, g, grid: Grid1D) -> float:
    return integrate_1d(np.abs(np.asarray(f) - np.asarray(g)), grid)


def l1_distance_2d(f, g, grid: Grid2D) -> float:
    return integrate_2d(np.abs(np.asarray(f) - np.asarray(g)), grid)


@dataclass(frozen=True)
class Gaussian:
    weight: float
    mean: float
    sigma: float


@dataclass(frozen=True)
class GaussianMixture1D:
    """Finite weighted sum of normal densities."""

    components: tuple[Gaussian, ...]

    def __post_init__(self):
        comps = tuple(c if isinstance(c, Gaussian) else Gaussian(*c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ValueError("mixture needs at least one component")
        for c in comps:
            if not (c.weight > 0):
                raise ValueError(f"component weight must be > 0, got {c.weight}")
            if not (c.sigma > 0) or not math.isfinite(c.sigma):
                raise ValueError(f"component sigma must be finite and > 0, got {c.sigma}")
            if not math.isfinite(c.mean):
                raise ValueError(f"component mean must be finite, got {c.mean}")
        total = math.fsum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, not 1")

    @classmethod
    def single(cls, mean: float, sigma: float) -> "GaussianMixture1D":
        return cls((Gaussian(1.0, mean, sigma),))

    @classmethod
    def normalized(cls, triples: Iterable[tuple[float, float, float]]) -> "GaussianMixture1D":
        """Build from unnormalized weights, dropping components with zero weight."""
        triples = [t for t in triples if t[0] > 0]
        total = math.fsum(t[0] for t in triples)
        return cls(tuple(Gaussian(w / total, mu, s) for w, mu, s in triples))

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([c.sigma for c in self.components])

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            z = (x - c.mean) / c.sigma
            out += c.weight * np.exp(-0.5 * z * z) / (SQRT_2PI * c.sigma)
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c in self.components:
            out += c.weight * ndtr((x - c.mean) / c.sigma)
        return out

    def mean(self) -> float:
        return float(self.weights @ self.means)

    def variance(self) -> float:
        mu = self.mean()
        return float(self.weights @ (self.sigmas**2 + (self.means - mu) ** 2))

    def ppf(self, u, tol: float = 1e-13, max_iter: int = 200):
        """Inverse CDF by vectorised bisection, bracketed by the component tails."""
        u = np.asarray(u, dtype=float)
        lo = np.full_like(u, min(c.mean - 40 * c.sigma for c in self.components))
        hi = np.full_like(u, max(c.mean + 40 * c.sigma for c in self.components))
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo, initial=0.0) <= tol * max(1.0, float(np.max(np.abs(hi), initial=0.0))):
                break
        return 0.5 * (lo + hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.components), size=n, p=self.weights)
        return self.means[idx] + self.sigmas[idx] * rng.standard_normal(n)

    def scaled(self, factor: float) -> "GaussianMixture1D":
        """Density of ``factor * X`` for X distributed as ``self``."""
        a = abs(factor)
        return GaussianMixture1D(tuple(Gaussian(c.weight, factor * c.mean, a * c.sigma) for c in self.components))

    def to_list(self) -> list[dict]:
        return [{"weight": c.weight, "mean": c.mean, "sigma": c.sigma} for c in self.components]

    def to_json(self) -> str:
        return json.dumps(self.to_list())

    @classmethod
    def from_list(cls, items: list[dict]) -> "GaussianMixture1D":
        return cls(tuple(Gaussian(float(d["weight"]), float(d["mean"]), float(d["sigma"])) for d in items))

    @classmethod
    def from_json(cls, text: str) -> "GaussianMixture1D":
        return cls.from_list(json.loads(text))


def quantum_prior(p: PhysicalParams, sigma: float | None = None, q0: float | None = None) -> GaussianMixture1D:
    """Equal-weight pair of Gaussians at +-q0, the initial particle density."""
    sigma = p.sigma_Q if sigma is None else sigma
    q0 = p.q0 if q0 is None else q0
    return GaussianMixture1D((Gaussian(0.5, -q0, sigma), Gaussian(0.5, q0, sigma)))


@dataclass(frozen=True)
class AlphaProfile:
    """Piecewise-constant interaction strength; zero outside the segments.

    Each segment ``(start, end, rate)`` covers the half-open interval
    ``(start, end]``.
    """

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(r)) for a, b, r in self.segments)
        object.__setattr__(self, "segments", segs)
        prev_end = -math.inf
        for a, b, r in segs:
            if not b > a:
                raise ValueError(f"segment ({a}, {b}] is empty")
            if a < prev_end:
                raise ValueError("segments overlap or are unordered")
            if not math.isfinite(r):
                raise ValueError(f"segment rate {r} is not finite")
            prev_end = b

    @classmethod
    def constant(cls, rate: float, duration: float) -> "AlphaProfile":
        return cls(((0.0, duration, rate),))

    @classmethod
    def from_params(cls, p: PhysicalParams) -> "AlphaProfile":
        return cls.constant(p.lam, p.epsilon)

    def rate(self, t: float) -> float:
        for a, b, r in self.segments:
            if a < t <= b:
                return r
        return 0.0

    def to_list(self) -> list[list[float]]:
        return [list(s) for s in self.segments]


@dataclass(frozen=True)
class HybridState:
    """Fields P(x, q) and S(x, q) on a 2-D grid at time ``t``."""

    grid: Grid2D
    P: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    t: float = 0.0
    norm_tol: float = 1e-6

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        S = np.array(self.S, dtype=float)
        if P.shape != self.grid.shape or S.shape != self.grid.shape:
            raise GridMismatch(f"fields {P.shape}/{S.shape} on grid {self.grid.shape}")
        if np.any(P < 0):
            raise ValueError("P must be non-negative")
        mass = integrate_2d(P, self.grid)
        if abs(mass - 1.0) > self.norm_tol:
            raise ValueError(f"P integrates to {mass!r}, outside 1 +- {self.norm_tol}")
        P.flags.writeable = False
        S.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "S", S)

    @property
    def mass(self) -> float:
        return integrate_2d(self.P, self.grid)


@dataclass(frozen=True)
class ClassicalEnsemble1D:
    """A single-coordinate configuration ensemble (P, S) on a 1-D grid."""

    grid: Grid1D
    P: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    t: float = 0.0

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        S = np.array(self.S, dtype=float)
        if P.shape != (self.grid.n,) or S.shape != (self.grid.n,):
            raise GridMismatch(f"fields {P.shape}/{S.shape} on grid of {self.grid.n} points")
        P.flags.writeable = False
        S.flags.writeable = False
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "S", S)
