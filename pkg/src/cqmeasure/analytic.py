"""Closed-form Gaussian solutions of the measurement model.

Covers the rigidly shifted joint density during the interaction window,
the pointer marginals before and after it, the action functions of the
two post-interaction pointer descriptions, the conditional density of the
particle given a pointer reading, the freely dispersing particle packets,
and quadrature of the ensemble energy and momentum functionals.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import (
    SQRT_2PI,
    AlphaProfile,
    ClassicalEnsemble1D,
    Gaussian,
    GaussianMixture1D,
    Grid2D,
    HybridState,
    PhysicalParams,
    integrate_1d,
    integrate_2d,
    quantum_prior,
)


class RegimeViolation(UserWarning):
    """The narrow-pointer approximation sigma_C << sigma_Q*lambda*t is not satisfied."""


class GridTooCoarse(ValueError):
    pass


def _gauss(z, sigma):
    return np.exp(-0.5 * (z / sigma) ** 2) / (SQRT_2PI * sigma)


def integrated_strength(profile: AlphaProfile, t: float) -> float:
    """Exact integral of a piecewise-constant rate from 0 to ``t``."""
    if t < 0:
        raise ValueError(f"NegativeTime: t = {t}")
    k = 0.0
    for a, b, r in profile.segments:
        lo, hi = max(a, 0.0), min(b, t)
        if hi > lo:
            k += r * (hi - lo)
    return k


@dataclass(frozen=True)
class JointAnalytic:
    """Joint density of the product initial state after an x-shift by ``q*k``.

    The initial action is identically zero, so the shifted action is too.
    """

    params: PhysicalParams
    k: float = 0.0

    def P(self, x, q):
        p = self.params
        x = np.asarray(x, dtype=float)
        q = np.asarray(q, dtype=float)
        pointer = _gauss(x - q * self.k, p.sigma_C)
        particle = 0.5 * (_gauss(q - p.q0, p.sigma_Q) + _gauss(q + p.q0, p.sigma_Q))
        return pointer * particle

    def S(self, x, q):
        return np.zeros(np.broadcast(np.asarray(x, float), np.asarray(q, float)).shape)

    def on_grid(self, grid: Grid2D, t: float = 0.0) -> HybridState:
        X, Q = grid.mesh()
        return HybridState(grid, self.P(X, Q), self.S(X, Q), t)


def initial_joint(p: PhysicalParams) -> JointAnalytic:
    return JointAnalytic(p, 0.0)


def shifted_joint(j: JointAnalytic, k: float) -> JointAnalytic:
    if not math.isfinite(k):
        raise ValueError(f"shift k must be finite, got {k}")
    return JointAnalytic(j.params, j.k + k)


def pointer_marginal_exact(p: PhysicalParams, k: float) -> GaussianMixture1D:
    sigma = math.hypot(p.sigma_C, p.sigma_Q * k)
    return GaussianMixture1D((Gaussian(0.5, -p.q0 * k, sigma), Gaussian(0.5, p.q0 * k, sigma)))


def pointer_marginal_limit(p: PhysicalParams, k: float) -> GaussianMixture1D:
    """Pointer density for sigma_C -> 0: the particle density rescaled by k."""
    if k == 0:
        raise ValueError("ZeroK: the narrow-pointer limit needs k != 0")
    return quantum_prior(p, sigma=abs(k) * p.sigma_Q, q0=abs(k) * p.q0)


def free_pointer_density(p: PhysicalParams, t: float, full_width: bool = False) -> GaussianMixture1D:
    """Pointer density after the interaction, two packets at +-lambda*q0*t.

    ``full_width`` keeps the initial pointer spread, sqrt(sigma_C^2 + (sigma_Q*lambda*t)^2);
    otherwise the narrow-pointer width sigma_Q*lambda*t is used.
    """
    if not t > p.epsilon:
        raise ValueError(f"TimeBeforeInteractionEnd: t = {t} <= epsilon = {p.epsilon}")
    k = p.lam * t
    if full_width:
        return pointer_marginal_exact(p, k)
    return pointer_marginal_limit(p, k)


def pointer_action_global(x, t, M: float):
    """S_C = M x^2 / 2t, the single-ensemble description of the pointer."""
    if np.any(np.asarray(t) == 0):
        raise ValueError("ZeroTime: the global pointer action is singular at t = 0")
    x = np.asarray(x, dtype=float)
    return M * x**2 / (2.0 * t)


def pointer_action_global_partials(x, t, M: float):
    """(dS/dt, dS/dx) of :func:`pointer_action_global`."""
    x = np.asarray(x, dtype=float)
    return -M * x**2 / (2.0 * t**2), M * x / t


def element_action(x, t, q, p: PhysicalParams):
    """Action of the mixture element labelled ``q``: a pointer moving at lambda*q."""
    x = np.asarray(x, dtype=float)
    v = p.lam * np.asarray(q, dtype=float)
    return -0.5 * p.M * v**2 * t + p.M * v * x


def element_action_partials(x, t, q, p: PhysicalParams):
    v = p.lam * np.asarray(q, dtype=float)
    shape = np.broadcast(np.asarray(x, float), np.asarray(t, float), v).shape
    return np.broadcast_to(-0.5 * p.M * v**2, shape), np.broadcast_to(p.M * v, shape)


def hj_residual(dS_dt, dS_dx, M: float):
    """Free Hamilton-Jacobi residual dS/dt + (dS/dx)^2 / 2M."""
    return dS_dt + dS_dx**2 / (2.0 * M)


def narrow_regime_ratio(p: PhysicalParams, t: float) -> float:
    return p.sigma_C / abs(p.sigma_Q * p.lam * t)


def conditional_quantum_posterior(p: PhysicalParams, x: float, t: float) -> GaussianMixture1D:
    """Particle density given pointer position ``x`` at ``t``, narrow-pointer form."""
    if not t > p.epsilon:
        raise ValueError(f"TimeBeforeInteractionEnd: t = {t} <= epsilon = {p.epsilon}")
    if narrow_regime_ratio(p, t) >= 0.1:
        warnings.warn(
            f"sigma_C / (sigma_Q lambda t) = {narrow_regime_ratio(p, t):.3g} is not small",
            RegimeViolation,
            stacklevel=2,
        )
    k = p.lam * t
    return GaussianMixture1D.single(x / k, p.sigma_C / abs(k))


def exact_conditional_quantum(p: PhysicalParams, x: float, k: float, noise: float = 0.0) -> GaussianMixture1D:
    """Exact particle density given pointer reading ``x`` after a shift ``k``.

    Conjugate update of the two-packet prior with the likelihood
    N(x; k q, sigma_C^2 + noise^2). With ``noise = 0`` this is the exact
    conditional of the shifted joint density; no narrow-pointer limit is taken.
    """
    var_x = p.sigma_C**2 + noise**2
    eta_q = 1.0 / p.sigma_Q**2
    eta_like = k * k / var_x
    post_var = 1.0 / (eta_q + eta_like)
    evidence_var = var_x + (k * p.sigma_Q) ** 2
    log_w, means = [], []
    for mu in (-p.q0, p.q0):
        log_w.append(-0.5 * (x - k * mu) ** 2 / evidence_var)
        means.append((eta_q * mu + k * x / var_x) * post_var)
    ref = max(log_w)
    return GaussianMixture1D.normalized(
        (math.exp(lw - ref), mean, math.sqrt(post_var)) for lw, mean in zip(log_w, means)
    )


@dataclass(frozen=True)
class QuantumFreeState:
    """The two freely dispersing packets started at rest at -+q0.

    ``plus`` is centred at -q0 and ``minus`` at +q0, following the sign
    convention of the (q +- q0) phase formula.
    """

    params: PhysicalParams
    t: float
    sigma_t: float

    def _tau(self) -> float:
        p = self.params
        return p.hbar * self.t / (2.0 * p.m * p.sigma_Q**2)

    def P_component(self, q, sign: int):
        return _gauss(np.asarray(q, dtype=float) + sign * self.params.q0, self.sigma_t)

    def S_component(self, q, sign: int):
        p = self.params
        q = np.asarray(q, dtype=float)
        phase0 = -0.5 * p.hbar * math.atan(self._tau())
        return phase0 + (q + sign * p.q0) ** 2 * p.hbar**2 * self.t / (8.0 * p.m * p.sigma_Q**2 * self.sigma_t**2)

    def wavefunction(self, q):
        p = self.params
        if p.hbar == 0:
            raise ValueError("no wavefunction for hbar = 0")
        psi = []
        for sign in (+1, -1):
            psi.append(np.sqrt(self.P_component(q, sign)) * np.exp(1j * self.S_component(q, sign) / p.hbar))
        return (psi[0] + 1j * psi[1]) / math.sqrt(2.0)

    def density(self, q, coherent: bool = False):
        """Equal-weight packet sum; ``coherent`` adds the interference term via |psi|^2."""
        if coherent:
            return np.abs(self.wavefunction(q)) ** 2
        return 0.5 * (self.P_component(q, +1) + self.P_component(q, -1))


def dispersed_width(sigma_Q: float, hbar: float, m: float, t: float) -> float:
    return sigma_Q * math.sqrt(1.0 + (hbar * t / (2.0 * m * sigma_Q**2)) ** 2)


def free_quantum_state(p: PhysicalParams, t: float) -> QuantumFreeState:
    if t < 0:
        raise ValueError(f"NegativeTime: t = {t}")
    return QuantumFreeState(p, t, dispersed_width(p.sigma_Q, p.hbar, p.m, t))


@dataclass(frozen=True)
class EnergyReport:
    H_C: float
    H_Q: float
    H_CQ: float
    total: float
    identity: Optional[float] = None  # -integral of P dS/dt, when dS/dt is supplied


def _check_resolution(P: np.ndarray):
    if min(P.shape) < 5:
        raise GridTooCoarse(f"need at least 5 points per axis, got shape {P.shape}")
    peak = float(P.max())
    if peak <= 0:
        raise GridTooCoarse("density vanishes on the grid")
    for axis in range(P.ndim):
        jump = float(np.max(np.abs(np.diff(P, axis=axis))))
        if jump > 0.5 * peak:
            raise GridTooCoarse(f"density changes by {jump / peak:.0%} of its peak between neighbouring points")


def _fisher_density(P: np.ndarray, dP: np.ndarray, floor_rel: float = 1e-300) -> np.ndarray:
    floor = floor_rel * float(P.max())
    out = np.zeros_like(P)
    ok = P > floor
    out[ok] = dP[ok] ** 2 / P[ok]
    return out


def ensemble_energy(
    state: Union[HybridState, JointAnalytic],
    p: PhysicalParams,
    alpha: float,
    grid: Optional[Grid2D] = None,
    dS_dt: Optional[np.ndarray] = None,
) -> EnergyReport:
    """Quadrature of the pointer, particle and coupling energy functionals.

    Derivatives are second-order central differences (one-sided at the edges).
    A :class:`JointAnalytic` needs an explicit ``grid``.
    """
    if isinstance(state, JointAnalytic):
        if grid is None:
            raise ValueError("a grid is required to evaluate an analytic state")
        state = state.on_grid(grid)
    g = state.grid
    P, S = state.P, state.S
    _check_resolution(P)
    dx, dq = g.x.spacing, g.q.spacing
    Sx, Sq = np.gradient(S, dx, dq, edge_order=2)
    Pq = np.gradient(P, dq, axis=1, edge_order=2)
    q = g.q.points[None, :]

    H_C = integrate_2d(P * Sx**2 / (2.0 * p.M), g)
    H_Q = integrate_2d(P * Sq**2 / (2.0 * p.m) + p.hbar**2 / (8.0 * p.m) * _fisher_density(P, Pq), g)
    H_CQ = alpha * integrate_2d(P * Sx * q, g)
    identity = None if dS_dt is None else -integrate_2d(P * dS_dt, g)
    return EnergyReport(H_C, H_Q, H_CQ, H_C + H_Q + H_CQ, identity)


def classical_ensemble_energy(
    state: ClassicalEnsemble1D, M: float, dS_dt: Optional[np.ndarray] = None
) -> EnergyReport:
    """Kinetic energy functional of a single classical ensemble."""
    _check_resolution(state.P)
    Sx = np.gradient(state.S, state.grid.spacing, edge_order=2)
    H_C = integrate_1d(state.P * Sx**2 / (2.0 * M), state.grid)
    identity = None if dS_dt is None else -integrate_1d(state.P * dS_dt, state.grid)
    return EnergyReport(H_C, 0.0, 0.0, H_C, identity)


def momentum_density(state: Union[HybridState, ClassicalEnsemble1D], axis: str = "x") -> np.ndarray:
    """Local momentum density P * dS/d(axis); its integral is the total momentum."""
    if isinstance(state, ClassicalEnsemble1D):
        if axis != "x":
            raise ValueError("a one-dimensional ensemble only has the x axis")
        return state.P * np.gradient(state.S, state.grid.spacing, edge_order=2)
    if axis not in ("x", "q"):
        raise ValueError(f"axis must be 'x' or 'q', got {axis!r}")
    idx = 0 if axis == "x" else 1
    h = state.grid.x.spacing if idx == 0 else state.grid.q.spacing
    return state.P * np.gradient(state.S, h, axis=idx, edge_order=2)


def element_ensemble(p: PhysicalParams, q: float, t: float, grid, width: Optional[float] = None) -> ClassicalEnsemble1D:
    """Finite-width version of the mixture element labelled ``q`` on an x-grid.

    The pointer profile is a Gaussian of ``width`` (default sigma_C) riding
    the trajectory x = lambda*q*t.
    """
    width = p.sigma_C if width is None else width
    x = grid.points
    P = _gauss(x - p.lam * q * t, width)
    return ClassicalEnsemble1D(grid, P, element_action(x, t, q, p), t)
