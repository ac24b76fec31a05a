import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cqmeasure.analytic import (
    GridTooCoarse,
    RegimeViolation,
    classical_ensemble_energy,
    conditional_quantum_posterior,
    dispersed_width,
    element_action,
    element_action_partials,
    element_ensemble,
    ensemble_energy,
    exact_conditional_quantum,
    free_pointer_density,
    free_quantum_state,
    hj_residual,
    initial_joint,
    integrated_strength,
    momentum_density,
    pointer_action_global,
    pointer_action_global_partials,
    pointer_marginal_exact,
    pointer_marginal_limit,
    shifted_joint,
)
from cqmeasure.core import (
    DESK_DEFAULTS,
    AlphaProfile,
    ClassicalEnsemble1D,
    Grid1D,
    Grid2D,
    HybridState,
    integrate_1d,
    integrate_2d,
    l1_distance_1d,
    quantum_prior,
)

P0 = DESK_DEFAULTS


def joint_formula(x, q, p, k=0.0):
    """Direct transcription of the product initial density, shifted along x by q*k."""
    xs = x - q * k
    pc = np.exp(-xs**2 / (2 * p.sigma_C**2)) / math.sqrt(2 * math.pi * p.sigma_C**2)
    pq = 0.5 * (np.exp(-(q - p.q0) ** 2 / (2 * p.sigma_Q**2)) + np.exp(-(q + p.q0) ** 2 / (2 * p.sigma_Q**2)))
    return pc * pq / math.sqrt(2 * math.pi * p.sigma_Q**2)


def joint_grid(p, k, n=801):
    q_half = p.q0 + 8 * p.sigma_Q
    return Grid2D(Grid1D.symmetric(8 * p.sigma_C + abs(k) * q_half, n), Grid1D.symmetric(q_half, n))


# ---------------------------------------------------------------- strength

def test_integrated_strength_examples():
    prof = AlphaProfile.constant(1.0, 0.01)
    assert integrated_strength(prof, 0.0) == 0.0
    assert integrated_strength(prof, 0.005) == pytest.approx(0.005, abs=1e-17)
    step = AlphaProfile(((0, 0.5, 2.0), (0.5, 1.0, 0.0)))
    assert integrated_strength(step, 2.0) == 1.0
    with pytest.raises(ValueError, match="NegativeTime"):
        integrated_strength(prof, -1.0)


@given(st.floats(0, 5), st.floats(0, 5))
def test_integrated_strength_additive(t1, t2):
    prof = AlphaProfile(((0, 1.0, 3.0), (1.5, 2.5, -1.0)))
    lo, hi = sorted((t1, t2))
    k = integrated_strength(prof, hi) - integrated_strength(prof, lo)
    # area of the profile between lo and hi, by fine midpoint sampling
    ts = np.linspace(lo, hi, 20001)
    mid = 0.5 * (ts[1:] + ts[:-1])
    area = np.sum([prof.rate(t) for t in mid]) * (ts[1] - ts[0]) if hi > lo else 0.0
    assert k == pytest.approx(area, abs=2e-3)


# ---------------------------------------------------------------- joint

def test_initial_joint_normalized():
    g = joint_grid(P0, 0.0)
    s = initial_joint(P0).on_grid(g)
    assert abs(integrate_2d(s.P, g) - 1.0) < 1e-8
    assert np.all(s.S == 0)


def test_initial_joint_single_packet_when_q0_zero():
    p = P0.with_(q0=0.0)
    g = joint_grid(p, 0.0)
    s = initial_joint(p).on_grid(g)
    marg = np.trapezoid(s.P, dx=g.x.spacing, axis=0)
    q = g.q.points
    single = np.exp(-q**2 / (2 * p.sigma_Q**2)) / math.sqrt(2 * math.pi * p.sigma_Q**2)
    assert l1_distance_1d(marg, single, g.q) < 1e-8


def test_initial_joint_point_value():
    j = initial_joint(P0)
    assert float(j.P(0.0, 1.0)) == pytest.approx(joint_formula(0.0, 1.0, P0), rel=1e-14)
    # quadrature-normalized: the same formula sums to one on a fine grid
    g = joint_grid(P0, 0.0)
    X, Q = g.mesh()
    assert integrate_2d(joint_formula(X, Q, P0), g) == pytest.approx(1.0, abs=1e-8)


def test_shift_identity_and_pointwise():
    j = initial_joint(P0)
    g = joint_grid(P0, 1.0, 201)
    X, Q = g.mesh()
    assert np.array_equal(shifted_joint(j, 0.0).P(X, Q), j.P(X, Q))
    diff = np.max(np.abs(shifted_joint(j, 1.0).P(X, Q) - joint_formula(X, Q, P0, k=1.0)))
    assert diff < 1e-12


@pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.0, -1.5])
def test_shift_preserves_mass_and_q_marginal(k):
    g = joint_grid(P0, k)
    s0 = initial_joint(P0).on_grid(g)
    sk = shifted_joint(initial_joint(P0), k).on_grid(g)
    assert abs(integrate_2d(sk.P, g) - 1.0) < 1e-8
    m0 = np.trapezoid(s0.P, dx=g.x.spacing, axis=0)
    mk = np.trapezoid(sk.P, dx=g.x.spacing, axis=0)
    assert np.max(np.abs(m0 - mk)) < 1e-8


@settings(max_examples=40)
@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(-3, 3))
def test_joint_reflection_symmetry(x, q, k):
    j = shifted_joint(initial_joint(P0), k)
    assert float(j.P(x, q)) == pytest.approx(float(j.P(-x, -q)), rel=1e-12, abs=1e-300)


# ---------------------------------------------------------------- pointer marginals

@pytest.mark.parametrize("k", [0.0, 0.5, 1.0, 2.0])
def test_pointer_marginal_matches_quadrature(k):
    g = joint_grid(P0, k, 1601)
    s = shifted_joint(initial_joint(P0), k).on_grid(g)
    marg = np.trapezoid(s.P, dx=g.q.spacing, axis=1)
    assert l1_distance_1d(marg, pointer_marginal_exact(P0, k).pdf(g.x.points), g.x) < 1e-8


def test_pointer_marginal_k0_is_initial_pointer():
    mix = pointer_marginal_exact(P0, 0.0)
    assert np.all(mix.means == 0) and np.all(mix.sigmas == P0.sigma_C)


@given(st.floats(-3, 3), st.floats(0, 5))
def test_pointer_marginal_even(k, x):
    mix = pointer_marginal_exact(P0, k)
    assert float(mix.pdf(x)) == pytest.approx(float(mix.pdf(-x)), rel=1e-12, abs=1e-300)


def test_limit_examples():
    mix = pointer_marginal_limit(P0, 1.0)
    assert sorted(mix.means) == [-1.0, 1.0]
    assert np.allclose(mix.sigmas, 0.1)
    with pytest.raises(ValueError, match="ZeroK"):
        pointer_marginal_limit(P0, 0.0)
    p = P0.with_(sigma_C=1e-4)
    g = Grid1D.symmetric(2.0, 8001)
    x = g.points
    assert l1_distance_1d(pointer_marginal_exact(p, 1.0).pdf(x), pointer_marginal_limit(p, 1.0).pdf(x), g) < 1e-4


@given(st.floats(0.1, 5))
def test_limit_scales_with_k(k):
    mix = pointer_marginal_limit(P0, k)
    assert np.allclose(sorted(mix.means), [-k * P0.q0, k * P0.q0])
    assert np.allclose(mix.sigmas, k * P0.sigma_Q)


def test_limit_converges_monotonically():
    k = 1.0
    g = Grid1D.symmetric(2.0, 20001)
    x = g.points
    dists = []
    for frac in (0.1, 0.05, 0.02, 0.01, 0.005, 0.001):
        p = P0.with_(sigma_C=frac * P0.sigma_Q * k)
        dists.append(l1_distance_1d(pointer_marginal_exact(p, k).pdf(x), pointer_marginal_limit(p, k).pdf(x), g))
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_free_pointer_density():
    t = P0.epsilon * (1 + 1e-9)
    full = free_pointer_density(P0, t, full_width=True)
    x = np.linspace(-0.5, 0.5, 101)
    assert np.max(np.abs(full.pdf(x) - pointer_marginal_exact(P0, P0.lam * t).pdf(x))) < 1e-12
    narrow = free_pointer_density(P0, 2.0)
    assert sorted(narrow.means) == [-2.0, 2.0]
    assert np.allclose(narrow.sigmas, 0.2)
    with pytest.raises(ValueError, match="TimeBeforeInteractionEnd"):
        free_pointer_density(P0, P0.epsilon)


# ---------------------------------------------------------------- actions

def test_actions_symbolic():
    x, t, q, M, lam = sp.symbols("x t q M lambda", real=True)
    sc = M * x**2 / (2 * t)
    scq = -M * lam**2 * q**2 * t / 2 + M * lam * q * x
    for S in (sc, scq):
        assert sp.simplify(sp.diff(S, t) + sp.diff(S, x) ** 2 / (2 * M)) == 0
    p = P0.with_(M=2.0, lam=3.0)
    vals = {x: 0.7, t: 1.3, q: -0.4, M: p.M, lam: p.lam}
    assert float(element_action(0.7, 1.3, -0.4, p)) == pytest.approx(float(scq.subs(vals)), rel=1e-14)
    assert float(pointer_action_global(0.7, 1.3, p.M)) == pytest.approx(float(sc.subs(vals)), rel=1e-14)
    st_, sx_ = element_action_partials(0.7, 1.3, -0.4, p)
    assert float(st_) == pytest.approx(float(sp.diff(scq, t).subs(vals)), rel=1e-14)
    assert float(sx_) == pytest.approx(float(sp.diff(scq, x).subs(vals)), rel=1e-14)
    gt, gx = pointer_action_global_partials(0.7, 1.3, p.M)
    assert float(gt) == pytest.approx(float(sp.diff(sc, t).subs(vals)), rel=1e-14)
    assert float(gx) == pytest.approx(float(sp.diff(sc, x).subs(vals)), rel=1e-14)


def test_action_examples():
    assert pointer_action_global(0.0, 1.0, 1.0) == 0.0
    with pytest.raises(ValueError, match="ZeroTime"):
        pointer_action_global(1.0, 0.0, 1.0)
    assert np.all(element_action(np.linspace(-1, 1, 5), 2.0, 0.0, P0) == 0.0)
    _, sx = pointer_action_global_partials(np.array([0.5, 2.0]), 2.0, 3.0)
    assert np.allclose(sx / 3.0, np.array([0.5, 2.0]) / 2.0)
    _, ex = element_action_partials(np.linspace(-1, 1, 5), 4.0, 0.3, P0.with_(lam=2.0))
    assert np.allclose(ex / P0.M, 0.6)


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(0.01, 10), st.floats(-3, 3))
def test_hj_residuals_vanish(x, t, q):
    st_, sx_ = element_action_partials(x, t, q, P0)
    scale = 1 + abs(float(st_))
    assert abs(float(hj_residual(st_, sx_, P0.M))) <= 1e-15 * scale
    gt, gx = pointer_action_global_partials(x, t, P0.M)
    assert abs(float(hj_residual(gt, gx, P0.M))) <= 1e-15 * (1 + abs(float(gt)))


# ---------------------------------------------------------------- posterior

def grid_bayes(p, x, k, g):
    """Brute-force conditional: joint at fixed x divided by its q-integral."""
    col = joint_formula(x, g.points, p, k=k)
    return col / integrate_1d(col, g)


def test_posterior_examples():
    p = P0.with_(sigma_C=1e-4)
    assert conditional_quantum_posterior(p, 0.0, 2.0).mean() == 0.0
    with pytest.warns(RegimeViolation):
        post = conditional_quantum_posterior(P0, 2.0, 2.0)
    assert post.mean() == 1.0
    assert post.sigmas[0] == 0.025
    g = Grid1D.covering(post, 2001)
    assert integrate_1d(post.pdf(g.points), g) == pytest.approx(1.0, abs=1e-8)


def test_posterior_matches_bayes_in_narrow_regime():
    p = P0.with_(sigma_C=1e-5)
    t = 2.0
    for x in (-2.1, -1.7, 0.3, 1.95, 2.0):
        narrow = conditional_quantum_posterior(p, x, t)
        g = Grid1D.covering(narrow, 4001)
        assert l1_distance_1d(narrow.pdf(g.points), grid_bayes(p, x, p.lam * t, g), g) < 1e-3


def test_posterior_at_desk_defaults_is_outside_narrow_regime():
    # sigma_C / (sigma_Q lambda t) = 0.25 at t = 2: the narrow formula misses the prior pull
    t, x = 2.0, 2.0
    with pytest.warns(RegimeViolation):
        narrow = conditional_quantum_posterior(P0, x, t)
    g = Grid1D(0.0, 2.0, 4001)
    l1 = l1_distance_1d(narrow.pdf(g.points), grid_bayes(P0, x, P0.lam * t, g), g)
    assert l1 > 1e-3


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(0.02, 3), st.floats(0.0, 0.2))
def test_exact_posterior_matches_bayes(x, k, noise):
    post = exact_conditional_quantum(P0, x, k, noise=noise)
    cover = Grid1D.covering(post, 2, nsigma=12)
    half = max(P0.q0 + 10 * P0.sigma_Q, abs(cover.lo), abs(cover.hi))
    g = Grid1D.symmetric(half, 8001)
    like = np.exp(-0.5 * (x - k * g.points) ** 2 / (P0.sigma_C**2 + noise**2))
    col = quantum_prior(P0).pdf(g.points) * like
    if integrate_1d(col, g) < 1e-250:
        return
    ref = col / integrate_1d(col, g)
    assert l1_distance_1d(post.pdf(g.points), ref, g) < 1e-8


# ---------------------------------------------------------------- free quantum packets

def test_free_state_t0():
    s = free_quantum_state(P0, 0.0)
    q = np.linspace(-2, 2, 401)
    assert s.sigma_t == P0.sigma_Q
    assert np.all(s.S_component(q, +1) == 0) and np.all(s.S_component(q, -1) == 0)
    assert np.allclose(s.density(q), quantum_prior(P0).pdf(q), rtol=1e-14, atol=0)


def test_free_state_widths():
    assert free_quantum_state(P0.with_(hbar=0.0), 5.0).sigma_t == P0.sigma_Q
    assert free_quantum_state(P0, 1.0).sigma_t == pytest.approx(0.1 * math.sqrt(2501), rel=1e-14)
    assert free_quantum_state(P0, 1.0).sigma_t == pytest.approx(5.001, abs=1e-3)


@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 2), st.floats(0, 2))
def test_widths_monotone(t1, t2, h1, h2):
    assert dispersed_width(0.1, 1.0, 1.0, min(t1, t2)) <= dispersed_width(0.1, 1.0, 1.0, max(t1, t2))
    assert dispersed_width(0.1, min(h1, h2), 1.0, 1.0) <= dispersed_width(0.1, max(h1, h2), 1.0, 1.0)


def fft_propagate(psi, q, t, hbar, m):
    k = 2 * np.pi * np.fft.fftfreq(q.size, q[1] - q[0])
    return np.fft.ifft(np.fft.fft(psi) * np.exp(-1j * hbar * k**2 * t / (2 * m)))


@pytest.mark.parametrize("t", [0.01, 0.05, 1.0])
def test_wavefunction_solves_free_schrodinger(t):
    # spectral propagation of the initial packets is exact up to round-off
    q = np.linspace(-120, 120, 2**17, endpoint=False)
    psi_t = fft_propagate(free_quantum_state(P0, 0.0).wavefunction(q), q, t, P0.hbar, P0.m)
    analytic = free_quantum_state(P0, t).wavefunction(q)
    assert np.max(np.abs(psi_t - analytic)) < 1e-8 * np.max(np.abs(analytic))
    rho = np.abs(psi_t) ** 2
    rho /= np.trapezoid(rho, q)
    if t == 1.0:
        # each packet has spread to ~5.001; the pair's width follows the dispersion law within 1%
        single = np.abs(fft_propagate(free_quantum_state(P0.with_(q0=0.0), 0.0).wavefunction(q), q, t, 1.0, 1.0)) ** 2
        single /= np.trapezoid(single, q)
        width = math.sqrt(np.trapezoid(q * q * single, q))
        assert width == pytest.approx(dispersed_width(P0.sigma_Q, 1.0, 1.0, 1.0), rel=1e-2)


# ---------------------------------------------------------------- energy and momentum

def test_energy_static_state_is_fisher_only():
    g = joint_grid(P0, 0.0, 801)
    rep = ensemble_energy(initial_joint(P0), P0, 0.0, grid=g)
    assert rep.H_C == 0 and rep.H_CQ == 0
    # Fisher information of each well-separated packet is 1/sigma_Q^2
    assert rep.H_Q == pytest.approx(P0.hbar**2 / (8 * P0.m * P0.sigma_Q**2), rel=1e-4)


@pytest.mark.parametrize("k", [0.0, 0.5, 1.0])
def test_energy_along_shift(k):
    # S stays zero, so only the Fisher term survives; the shift feeds the
    # pointer's x-gradient into the q-gradient: F_q -> 1/sigma_Q^2 + k^2/sigma_C^2
    g = joint_grid(P0, 1.0, 801)
    ek = ensemble_energy(shifted_joint(initial_joint(P0), k), P0, P0.lam, grid=g)
    assert ek.H_CQ == 0 and ek.H_C == 0
    expected = P0.hbar**2 / (8 * P0.m) * (1 / P0.sigma_Q**2 + k**2 / P0.sigma_C**2)
    assert ek.total == pytest.approx(expected, rel=1e-4)


@pytest.mark.parametrize("q", [-1.3, 0.4, 1.0])
def test_element_energy_identity(q):
    t = 2.0
    g = Grid1D(P0.lam * q * t - 1.0, P0.lam * q * t + 1.0, 2001)
    el = element_ensemble(P0, q, t, g)
    dS_dt, _ = element_action_partials(g.points, t, q, P0)
    rep = classical_ensemble_energy(el, P0.M, dS_dt=dS_dt)
    expected = 0.5 * P0.M * (P0.lam * q) ** 2
    assert rep.total == pytest.approx(expected, rel=1e-8)
    assert rep.identity == pytest.approx(rep.total, rel=1e-8)


def test_momentum_density():
    g = joint_grid(P0, 0.0, 201)
    s = initial_joint(P0).on_grid(g)
    assert np.all(momentum_density(s, "x") == 0) and np.all(momentum_density(s, "q") == 0)
    q = 0.7
    gx = Grid1D(-1.0, 3.0, 2001)
    el = element_ensemble(P0, q, 2.0, gx)
    assert integrate_1d(momentum_density(el), gx) == pytest.approx(P0.M * P0.lam * q, rel=1e-10)
    with pytest.raises(ValueError):
        momentum_density(s, "y")


def test_momentum_generates_translations():
    gx = Grid1D(-1.0, 1.0, 4001)
    x = gx.points
    sig = P0.sigma_C
    P = np.exp(-0.5 * (x / sig) ** 2) / (math.sqrt(2 * math.pi) * sig)
    d = 1e-6
    shifted = np.exp(-0.5 * ((x - d) / sig) ** 2) / (math.sqrt(2 * math.pi) * sig)
    assert np.max(np.abs((shifted - P) - (-d * np.gradient(P, gx.spacing, edge_order=2)))) < 1e-6


def test_energy_grid_too_coarse():
    g = Grid2D(Grid1D.symmetric(0.4, 4), Grid1D.symmetric(1.8, 4))
    s = HybridState(g, np.full(g.shape, 1.0 / integrate_2d(np.ones(g.shape), g)), np.zeros(g.shape))
    with pytest.raises(GridTooCoarse):
        ensemble_energy(s, P0, 0.0)
    g = Grid2D(Grid1D.symmetric(0.4, 9), Grid1D.symmetric(1.8, 9))
    X, Q = g.mesh()
    P = joint_formula(X, Q, P0)
    s = HybridState(g, P / integrate_2d(P, g), np.zeros(g.shape))
    with pytest.raises(GridTooCoarse):
        ensemble_energy(s, P0, 0.0)


def test_element_ensemble_is_classical_1d():
    el = element_ensemble(P0, 0.5, 1.0, Grid1D(-1, 2, 301))
    assert isinstance(el, ClassicalEnsemble1D)
    assert integrate_1d(el.P, el.grid) == pytest.approx(1.0, abs=1e-10)
