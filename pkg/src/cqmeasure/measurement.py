"""Pointer readout and the resulting update of the particle density.

After the interaction the pointer is a classical mixture: each element is
labelled by a particle position ``q`` and moves rigidly at ``lambda * q``.
Reading the pointer selects an element (ideal readout) or reweights the
labels (noisy readout), and the particle density conditioned on the reading
no longer refers to the pointer coordinate at all.

Delta-like pointer states are kept symbolic (label + trajectory) and are
never put on a grid.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Optional, Union

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstest

from .analytic import (
    RegimeViolation,
    element_action,
    exact_conditional_quantum,
    free_pointer_density,
    narrow_regime_ratio,
)
from .core import GaussianMixture1D, Grid1D, PhysicalParams, integrate_1d, quantum_prior

# Label grid resolution used when none is supplied.
DEFAULT_LABELS = 2001


class LabelOutOfRange(ValueError):
    pass


class DegenerateWeights(ValueError):
    pass


class InvalidRecord(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointerMixture:
    """Pointer ensemble at time ``t`` written as a mixture over particle labels.

    Parameters
    ----------
    params : PhysicalParams
    t : float
        Time of the decomposition, after the interaction window.
    labels : Grid1D
        Label axis (particle positions ``q``).
    weights : ndarray
        Weight density on ``labels``; integrates to one.
    prior : GaussianMixture1D, optional
        Closed form of the weight density when it is known. Sampling then
        inverts the analytic CDF instead of the grid one.
    """

    params: PhysicalParams
    t: float
    labels: Grid1D
    weights: np.ndarray
    prior: Optional[GaussianMixture1D] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != (self.labels.n,):
            raise ValueError(f"weights of shape {w.shape} on {self.labels.n} labels")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weight density must be finite and >= 0")
        mass = integrate_1d(w, self.labels)
        if mass <= 0:
            raise DegenerateWeights("weight density is zero everywhere")
        if abs(mass - 1.0) > 1e-6:
            raise ValueError(f"weight density integrates to {mass!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, p: PhysicalParams, t: float, labels: Grid1D, weights) -> "PointerMixture":
        """Mixture from an arbitrary nonnegative weight array, normalized here."""
        w = np.asarray(weights, dtype=float)
        if w.shape != (labels.n,):
            raise ValueError(f"weights of shape {w.shape} on {labels.n} labels")
        if np.any(w < 0):
            raise ValueError("weights must be >= 0")
        mass = integrate_1d(w, labels)
        if not mass > 0:
            raise DegenerateWeights("weight density is zero everywhere")
        return cls(p, t, labels, w / mass)

    def velocity(self, q):
        return self.params.lam * np.asarray(q, dtype=float)

    def trajectory(self, q, t: Optional[float] = None):
        """Pointer position ``lambda * q * t`` of the element labelled ``q``."""
        t = self.t if t is None else t
        return self.params.lam * np.asarray(q, dtype=float) * t

    def element_action(self, x, q, t: Optional[float] = None):
        return element_action(x, self.t if t is None else t, q, self.params)

    def weight_at(self, q):
        if self.prior is not None:
            return self.prior.pdf(q)
        return np.interp(q, self.labels.points, self.weights, left=0.0, right=0.0)

    def marginal_density(self, x, t: Optional[float] = None):
        """Pointer density from the delta elements, by change of variables q = x / (lambda t)."""
        t = self.t if t is None else t
        k = self.params.lam * t
        if k == 0:
            raise ValueError("pointer density is a point mass when lambda * t = 0")
        x = np.asarray(x, dtype=float)
        return self.weight_at(x / k) / abs(k)

    def mean_speed(self) -> float:
        """Ensemble average of |lambda q|."""
        lam = abs(self.params.lam)
        if self.prior is not None:
            e = 0.0
            for c in self.prior.components:
                z = c.mean / c.sigma
                e += c.weight * (c.sigma * math.sqrt(2 / math.pi) * math.exp(-0.5 * z * z) + c.mean * (1 - 2 * ndtr(-z)))
            return lam * e
        q = self.labels.points
        return lam * integrate_1d(np.abs(q) * self.weights, self.labels)


def decompose_pointer_mixture(
    p: PhysicalParams, t: float, labels: Optional[Grid1D] = None
) -> PointerMixture:
    """Write the free pointer at ``t`` as a mixture of rigidly moving elements.

    The weights are the particle density frozen at the start of the
    interaction. Warns with :class:`RegimeViolation` when the initial pointer
    width is not small against ``sigma_Q * lambda * t``.
    """
    if not t > p.epsilon:
        raise ValueError(f"TimeBeforeInteractionEnd: t = {t} <= epsilon = {p.epsilon}")
    if narrow_regime_ratio(p, t) >= 0.1:
        warnings.warn(
            f"sigma_C / (sigma_Q lambda t) = {narrow_regime_ratio(p, t):.3g}; the mixture ignores the pointer width",
            RegimeViolation,
            stacklevel=2,
        )
    prior = quantum_prior(p)
    labels = labels or Grid1D.covering(prior, DEFAULT_LABELS)
    return PointerMixture(p, t, labels, prior.pdf(labels.points), prior)


@dataclass(frozen=True)
class CollapsedPointer:
    """A single mixture element: the pointer moves as x(t) = lambda * label * t."""

    label: float
    lam: float
    M: float = 1.0

    def position(self, t):
        return self.lam * self.label * np.asarray(t, dtype=float)

    @property
    def velocity(self) -> float:
        return self.lam * self.label

    def action(self, x, t):
        v = self.velocity
        return -0.5 * self.M * v * v * np.asarray(t, dtype=float) + self.M * v * np.asarray(x, dtype=float)

    def to_dict(self) -> dict:
        return {"kind": "collapsed", "label": self.label, "lambda": self.lam, "M": self.M}


@dataclass(frozen=True)
class LabelEnsemble:
    """A range of mixture elements, weighted by a density over labels."""

    labels: GaussianMixture1D
    lam: float

    def position_density(self, t: float) -> GaussianMixture1D:
        return self.labels.scaled(self.lam * t)

    def to_dict(self) -> dict:
        return {"kind": "ensemble", "labels": self.labels.to_list(), "lambda": self.lam}


PointerState = Union[CollapsedPointer, LabelEnsemble]


def collapse_pointer(mix: PointerMixture, q_prime: float, t: Optional[float] = None) -> CollapsedPointer:
    """Select the element labelled ``q_prime``.

    ``t`` is accepted for symmetry with the readout time; the collapsed
    element carries its whole trajectory, so it does not change the result.
    """
    if not (mix.labels.lo <= q_prime <= mix.labels.hi):
        raise LabelOutOfRange(f"label {q_prime} outside [{mix.labels.lo}, {mix.labels.hi}]")
    return CollapsedPointer(float(q_prime), mix.params.lam, mix.params.M)


def sample_measurement(mix: PointerMixture, seed) -> tuple[float, CollapsedPointer]:
    """Draw a label by inverse-CDF sampling and collapse onto it."""
    rng = np.random.default_rng(seed)
    u = rng.random()
    if mix.prior is not None:
        q = float(mix.prior.ppf(u))
        q = min(max(q, mix.labels.lo), mix.labels.hi)
    else:
        mass = mix.weights * mix.labels.spacing
        total = mass.sum()
        if not total > 0:
            raise DegenerateWeights("weight density is zero everywhere")
        cdf = np.cumsum(mass) / total
        q = float(mix.labels.points[min(np.searchsorted(cdf, u, side="right"), mix.labels.n - 1)])
    return q, collapse_pointer(mix, q)


@dataclass(frozen=True)
class MeasurementRecord:
    t_m: float
    x_m: float
    sigma_m: float = 0.0

    def check(self, p: PhysicalParams) -> "MeasurementRecord":
        if not all(math.isfinite(v) for v in (self.t_m, self.x_m, self.sigma_m)):
            raise InvalidRecord(f"non-finite record {self}")
        if not self.t_m > p.epsilon:
            raise InvalidRecord(f"t_m = {self.t_m} must exceed epsilon = {p.epsilon}")
        if self.sigma_m < 0:
            raise InvalidRecord(f"sigma_m must be >= 0, got {self.sigma_m}")
        if p.lam == 0:
            raise InvalidRecord("a pointer with lambda = 0 carries no information")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "MeasurementRecord":
        try:
            return cls(float(d["t_m"]), float(d["x_m"]), float(d.get("sigma_m", 0.0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidRecord(f"bad record {d!r}: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "MeasurementRecord":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"t_m": self.t_m, "x_m": self.x_m, "sigma_m": self.sigma_m}


@dataclass(frozen=True)
class Posterior:
    """State after a readout.

    Holds the pointer element(s) that survived and the particle density. The
    record enters only through its numbers; there is deliberately no field
    over the pointer coordinate, so the particle part cannot depend on it.
    """

    record: MeasurementRecord
    pointer: PointerState
    quantum: GaussianMixture1D
    independent: bool = field(default=True, init=False)

    @property
    def q_m(self) -> float:
        return self.quantum.mean()

    @property
    def sigma_Q_m(self) -> float:
        return math.sqrt(self.quantum.variance())

    def to_dict(self) -> dict:
        return {
            "record": self.record.to_dict(),
            "pointer": self.pointer.to_dict(),
            "quantum": self.quantum.to_list(),
            "independent": self.independent,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write_csv(self, path, grid: Grid1D) -> None:
        q = grid.points
        rho = self.quantum.pdf(q)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("q,density\n")
            for a, b in zip(q, rho):
                fh.write(f"{a!r},{b!r}\n")


def posterior_field_names() -> tuple[str, ...]:
    return tuple(f.name for f in fields(Posterior))


def update_quantum(rec: MeasurementRecord, p: PhysicalParams) -> Posterior:
    """Particle posterior after reading ``x_m`` at ``t_m``.

    With ``sigma_m == 0`` this is the narrow-pointer result: a single
    Gaussian centred at ``x_m / (lambda t_m)`` with width
    ``sigma_C / (lambda t_m)``; the prepared width ``sigma_Q`` does not enter.
    A positive ``sigma_m`` is handed to :func:`update_quantum_noisy`.
    """
    rec.check(p)
    if rec.sigma_m > 0:
        return update_quantum_noisy(rec, p)
    k = p.lam * rec.t_m
    q_m = rec.x_m / k
    post = GaussianMixture1D.single(q_m, p.sigma_C / abs(k))
    return Posterior(rec, CollapsedPointer(q_m, p.lam, p.M), post)


def update_quantum_noisy(rec: MeasurementRecord, p: PhysicalParams) -> Posterior:
    """Conjugate update of the two-packet prior with N(x_m; lambda q t_m, sigma_m^2 + sigma_C^2)."""
    rec.check(p)
    if not rec.sigma_m > 0:
        raise InvalidRecord("noisy update needs sigma_m > 0")
    post = exact_conditional_quantum(p, rec.x_m, p.lam * rec.t_m, noise=rec.sigma_m)
    return Posterior(rec, LabelEnsemble(post, p.lam), post)


def monte_carlo_pointer(p: PhysicalParams, t: float, n: int, seed) -> np.ndarray:
    """Pointer positions ``lambda q t`` for ``n`` labels drawn from the initial particle density."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not t > p.epsilon:
        raise ValueError(f"TimeBeforeInteractionEnd: t = {t} <= epsilon = {p.epsilon}")
    rng = np.random.default_rng(seed)
    return p.lam * t * quantum_prior(p).sample(rng, n)


def pointer_ks(samples, p: PhysicalParams, t: float) -> tuple[float, float]:
    """KS statistic and p-value of pointer samples against the narrow free pointer density."""
    ref = free_pointer_density(p, t)
    res = kstest(np.asarray(samples, dtype=float), ref.cdf)
    return float(res.statistic), float(res.pvalue)
