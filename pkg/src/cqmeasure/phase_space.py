"""Phase-space densities of free classical mixtures.

A free-particle ensemble that is a mixture of pure Hamilton-Jacobi
ensembles can be written two ways. In the *principal* form each element
starts at a point ``x0`` and spreads with velocity profile F:

    rho(x, p, t) = (1/m) P_x0(x - p t / m) F(p / m)

In the *separated* form each element moves at one velocity ``v`` with
spatial profile F:

    rho(x, p, t) = (1/m) P_v(p / m) F(x - p t / m)

Swapping the roles of the label density and the profile turns one into the
other. Point masses are replaced at evaluation time by a Gaussian two grid
spacings wide in the argument's own units.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import SQRT_2PI, GaussianMixture1D, Grid1D, PhysicalParams, integrate_1d, quantum_prior

REPRESENTATIONS = ("principal", "separated")

# Width of a regularized point mass, in grid spacings of its argument.
DELTA_SPACINGS = 2.0


class ZeroTime(ValueError):
    pass


@dataclass(frozen=True)
class Delta:
    """Point mass at ``at``."""

    at: float = 0.0

    def pdf(self, z, width: float):
        s = DELTA_SPACINGS * width
        u = (np.asarray(z, dtype=float) - self.at) / s
        return np.exp(-0.5 * u * u) / (SQRT_2PI * s)


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Density sampled on a grid, linearly interpolated and zero outside."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,) or np.any(v < 0):
            raise ValueError("tabulated density must be >= 0 with one value per node")
        mass = integrate_1d(v, self.grid)
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"tabulated density integrates to {mass!r}, not 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def pdf(self, z):
        return np.interp(z, self.grid.points, self.values, left=0.0, right=0.0)


Density = Union[GaussianMixture1D, Delta, Tabulated]


def _evaluate(d: Density, z, width: float):
    if isinstance(d, Delta):
        return d.pdf(z, width)
    return d.pdf(z)


def _density_to_json(d: Density):
    if isinstance(d, Delta):
        return {"delta": d.at}
    if isinstance(d, GaussianMixture1D):
        return {"gaussians": d.to_list()}
    raise TypeError("tabulated densities are not serialized")


def _density_from_json(obj) -> Density:
    if "delta" in obj:
        return Delta(float(obj["delta"]))
    if "gaussians" in obj:
        return GaussianMixture1D.from_list(obj["gaussians"])
    raise ValueError(f"unknown density {obj!r}")


@dataclass(frozen=True)
class MixtureSpec:
    """A free-particle mixture in one of the two representations.

    ``label`` is P_x0 (principal) or P_v (separated); ``profile`` is F over
    velocity (principal) or over position (separated).
    """

    representation: str
    label: Density
    profile: Density
    m: float = 1.0

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}, got {self.representation!r}")
        if not self.m > 0:
            raise ValueError(f"mass must be > 0, got {self.m}")

    def to_dict(self) -> dict:
        return {
            "representation": self.representation,
            "label": _density_to_json(self.label),
            "profile": _density_to_json(self.profile),
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(d["representation"], _density_from_json(d["label"]), _density_from_json(d["profile"]), float(d.get("m", 1.0)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MixtureSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PhaseGrid:
    x: Grid1D
    p: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.n, self.p.n)

    def mesh(self):
        return np.meshgrid(self.x.points, self.p.points, indexing="ij")


@dataclass(frozen=True, eq=False)
class PhaseDensity:
    """rho on an (x, p) grid, indexed ``[ix, ip]``."""

    grid: PhaseGrid
    rho: np.ndarray
    t: float

    def __post_init__(self):
        if self.rho.shape != self.grid.shape:
            raise ValueError(f"field of shape {self.rho.shape} on grid of shape {self.grid.shape}")

    @property
    def mass(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.rho, dx=self.grid.p.spacing, axis=1), dx=self.grid.x.spacing))

    def x_marginal(self) -> np.ndarray:
        return np.trapezoid(self.rho, dx=self.grid.p.spacing, axis=1)

    def p_marginal(self) -> np.ndarray:
        return np.trapezoid(self.rho, dx=self.grid.x.spacing, axis=0)

    def write_csv(self, path) -> None:
        X, P = self.grid.mesh()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,p,rho\n")
            for a, b, c in zip(X.ravel(), P.ravel(), self.rho.ravel()):
                fh.write(f"{a!r},{b!r},{c!r}\n")


def principal_density(spec: MixtureSpec, grid: PhaseGrid, t: float) -> PhaseDensity:
    if spec.representation != "principal":
        raise ValueError("spec is not in the principal representation")
    if t == 0:
        raise ZeroTime("the principal-function family is singular at t = 0")
    X, P = grid.mesh()
    v = P / spec.m
    rho = _evaluate(spec.label, X - v * t, grid.x.spacing) * _evaluate(spec.profile, v, grid.p.spacing / spec.m) / spec.m
    return PhaseDensity(grid, rho, t)


def separated_density(spec: MixtureSpec, grid: PhaseGrid, t: float) -> PhaseDensity:
    if spec.representation != "separated":
        raise ValueError("spec is not in the separated representation")
    X, P = grid.mesh()
    v = P / spec.m
    rho = _evaluate(spec.label, v, grid.p.spacing / spec.m) * _evaluate(spec.profile, X - v * t, grid.x.spacing) / spec.m
    return PhaseDensity(grid, rho, t)


def density(spec: MixtureSpec, grid: PhaseGrid, t: float) -> PhaseDensity:
    if spec.representation == "principal":
        return principal_density(spec, grid, t)
    return separated_density(spec, grid, t)


def equivalence_transform(spec: MixtureSpec) -> MixtureSpec:
    """Swap label density and profile and switch representation."""
    other = "separated" if spec.representation == "principal" else "principal"
    return MixtureSpec(other, spec.profile, spec.label, spec.m)


def max_difference(spec: MixtureSpec, grid: PhaseGrid, t: float) -> float:
    """Largest pointwise gap between ``spec`` and its transformed partner at ``t``."""
    a = density(spec, grid, t).rho
    b = density(equivalence_transform(spec), grid, t).rho
    return float(np.max(np.abs(a - b)))


def random_gaussian_spec(rng: np.random.Generator, m: Optional[float] = None) -> MixtureSpec:
    """Principal spec with a one- or two-component label density and a Gaussian velocity profile."""
    ncomp = int(rng.integers(1, 3))
    w = rng.uniform(0.2, 1.0, ncomp)
    label = GaussianMixture1D.normalized(
        (float(wi), float(rng.uniform(-1, 1)), float(rng.uniform(0.1, 0.4))) for wi in w
    )
    profile = GaussianMixture1D.single(float(rng.uniform(-0.5, 0.5)), float(rng.uniform(0.1, 0.4)))
    return MixtureSpec("principal", label, profile, float(rng.uniform(0.5, 2.0)) if m is None else m)


def worked_delta_spec(v_prime: float = 0.5, sigma_v: float = 0.2, m: float = 1.0) -> MixtureSpec:
    """All particles start at the origin, velocities Gaussian about ``v_prime``."""
    return MixtureSpec("principal", Delta(0.0), GaussianMixture1D.single(v_prime, sigma_v), m)


def bundled_specs(seed: int = 20240101) -> list[MixtureSpec]:
    rng = np.random.default_rng(seed)
    return [random_gaussian_spec(rng) for _ in range(3)] + [worked_delta_spec()]


def grid_for(spec: MixtureSpec, times, n: int = 401, nsigma: float = 7.0) -> PhaseGrid:
    """(x, p) box holding ``spec`` over every time in ``times``."""
    label, profile = spec.label, spec.profile
    if spec.representation == "separated":
        label, profile = profile, label

    def span(d: Density):
        if isinstance(d, GaussianMixture1D):
            return (min(c.mean - nsigma * c.sigma for c in d.components), max(c.mean + nsigma * c.sigma for c in d.components))
        if isinstance(d, Delta):
            return (d.at, d.at)
        return (d.grid.lo, d.grid.hi)

    x_lo, x_hi = span(label)
    v_lo, v_hi = span(profile)
    t_max = max(abs(t) for t in times)
    lo = min(x_lo + v_lo * t_max, x_lo)
    hi = max(x_hi + v_hi * t_max, x_hi)
    pad = 0.1 * (hi - lo) + 1e-3
    vpad = 0.1 * (v_hi - v_lo) + 1e-3
    return PhaseGrid(Grid1D(lo - pad, hi + pad, n), Grid1D(spec.m * (v_lo - vpad), spec.m * (v_hi + vpad), n))


def pointer_velocity_spec(p: PhysicalParams) -> MixtureSpec:
    """The post-interaction pointer as a separated mixture.

    Labels are velocities ``lambda q`` with the initial particle density as
    weights; each element keeps the pointer's initial spatial profile.
    """
    pv = quantum_prior(p).scaled(p.lam)
    return MixtureSpec("separated", pv, GaussianMixture1D.single(0.0, p.sigma_C), p.M)


def velocity_labels(labels: Grid1D, lam: float) -> Grid1D:
    """Velocity axis matching a particle-label grid."""
    a, b = sorted((lam * labels.lo, lam * labels.hi))
    return Grid1D(a, b, labels.n)
