"""Tests for the alternating-minimization driver.

Frozen scalar cases are derived by hand from the step definitions; the
terminal weight refinement is additionally checked against a
general-purpose constrained optimizer and against stationarity
conditions evaluated directly.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import LinearConstraint, minimize

from bicoclust.core import (
    DataMatrix,
    Hyperparameters,
    SimplexWeights,
    column_sq_residuals,
    objective_value,
)
from bicoclust.graph import build_affinities, is_connected
from bicoclust.palm import (
    PalmConfig,
    final_w_refinement,
    fit,
    lipschitz_l1,
    lipschitz_l2,
    u_step,
    w_step,
)
from bicoclust.prox import BiclusterProx, CvxBiclustConfig


def _problem(n=20, p=15, seed=0, noise=1.0, k=4):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-3.0, 3.0, size=(2, 2))
    rlab = np.repeat([0, 1], [n - n // 2, n // 2])
    clab = np.repeat([0, 1], [p - p // 2, p // 2])
    X = centers[rlab][:, clab] + noise * rng.standard_normal((n, p))
    phi = build_affinities(X, k, 1.0, scale_dim=p)
    psi = build_affinities(X.T, k, 1.0, scale_dim=n)
    return X, phi, psi


# ----------------------------------------------------------------------
# step sizes


def test_lipschitz_l1_frozen():
    assert lipschitz_l1(np.array([0.5, 0.5]), 1.0) == pytest.approx(0.75)
    assert lipschitz_l1(np.array([1.0, 0.0]), 0.0) == pytest.approx(1.0)
    assert lipschitz_l1(np.array([0.25, 0.75]), 0.0) == pytest.approx(0.5625)


def test_lipschitz_l2_frozen():
    # residual columns with squared norms 3 and 4 give norm 5
    X = np.zeros((3, 2))
    U = np.column_stack([np.ones(3), [2.0, 0.0, 0.0]])
    assert lipschitz_l2(X, U) == pytest.approx(5.0)
    assert lipschitz_l2(X, np.zeros((3, 2))) == 0.0


@given(st.integers(2, 8), st.floats(0.0, 2.0), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_lipschitz_l1_simplex_bounds(p, lam, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(p))
    val = lipschitz_l1(w, lam)
    assert 1.0 / p ** 2 + lam / p - 1e-12 <= val <= 1.0 + lam + 1e-12


# ----------------------------------------------------------------------
# single steps


def test_u_step_surrogate_at_gamma_zero():
    # with gamma = 0 the prox is the identity, exposing the surrogate:
    # S = U - (U - X) * (w^2 + lam*w) / nu1 columnwise
    rng = np.random.default_rng(3)
    X = rng.standard_normal((6, 2))
    U = rng.standard_normal((6, 2))
    phi = build_affinities(X, 2, 1.0, scale_dim=2)
    psi = build_affinities(X.T, 1, 1.0, scale_dim=6)
    hp = Hyperparameters(gamma=0.0)
    prox = BiclusterProx(phi, psi, CvxBiclustConfig())
    w = np.array([1.0, 0.0])
    U_new, nu1, _ = u_step(X, U, w, hp, prox)
    assert nu1 == 2.0
    np.testing.assert_allclose(U_new[:, 0], (U[:, 0] + X[:, 0]) / 2.0,
                               rtol=0, atol=1e-12)
    np.testing.assert_allclose(U_new[:, 1], U[:, 1], rtol=0, atol=1e-12)


def test_w_step_frozen_example():
    # w = (1/2, 1/2), residual sq-norms D = (1, 0), lam = 0:
    # nu2 = 2, v = (1/4, 1/2), projection adds 1/8 to each coordinate
    X = np.zeros((2, 2))
    U = np.column_stack([[1.0, 0.0], [0.0, 0.0]])
    w_new, nu2 = w_step(X, U, np.array([0.5, 0.5]), lam=0.0)
    assert nu2 == pytest.approx(2.0)
    np.testing.assert_allclose(w_new, [0.375, 0.625], rtol=0, atol=1e-12)


def test_w_step_zero_residuals_is_noop():
    X = np.arange(12.0).reshape(4, 3)
    w = np.array([0.2, 0.3, 0.5])
    w_new, nu2 = w_step(X, X.copy(), w, lam=0.7)
    np.testing.assert_allclose(w_new, w, rtol=0, atol=1e-12)
    assert nu2 == pytest.approx(1e-8)


@given(st.integers(2, 6), st.floats(0.0, 1.0), st.integers(0, 10 ** 6))
@settings(max_examples=60, deadline=None)
def test_w_step_never_increases_weight_objective(p, lam, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((5, p))
    U = rng.standard_normal((5, p))
    w = rng.dirichlet(np.ones(p))
    D = column_sq_residuals(X, U)

    def h(v):
        return 0.5 * np.sum((v * v + lam * v) * D)

    w_new, _ = w_step(X, U, w, lam)
    assert np.all(w_new >= 0)
    assert w_new.sum() == pytest.approx(1.0, abs=1e-10)
    assert h(w_new) <= h(w) + 1e-10


# ----------------------------------------------------------------------
# terminal weight refinement


def test_final_w_refinement_frozen():
    # D = (1, 2), lam = 0: mu = 1 / (1 + 1/2), w = (2/3, 1/3)
    X = np.zeros((1, 2))
    U = np.array([[1.0, math.sqrt(2.0)]])
    np.testing.assert_allclose(final_w_refinement(X, U, 0.0),
                               [2.0 / 3.0, 1.0 / 3.0], rtol=0, atol=1e-12)
    # one zero-residual feature takes all the mass
    U2 = np.array([[0.0, math.sqrt(5.0)]])
    np.testing.assert_allclose(final_w_refinement(X, U2, 0.0),
                               [1.0, 0.0], rtol=0, atol=1e-12)
    # ties among zero residuals share uniformly
    X3 = np.zeros((1, 3))
    U3 = np.array([[0.0, 0.0, math.sqrt(3.0)]])
    np.testing.assert_allclose(final_w_refinement(X3, U3, 0.0),
                               [0.5, 0.5, 0.0], rtol=0, atol=1e-12)


def test_final_w_refinement_sparsifies_with_lam():
    # D = (1, 4), lam = 1: the single-feature solution w = (1, 0) is
    # stationary (mu = 1.5 <= lam * D_2 / 2 = 2 keeps feature 2 out)
    X = np.zeros((1, 2))
    U = np.array([[1.0, 2.0]])
    np.testing.assert_allclose(final_w_refinement(X, U, 1.0),
                               [1.0, 0.0], rtol=0, atol=1e-12)


def _refinement_kkt_gap(w, D, lam):
    """Max stationarity violation for min 1/2 sum (w^2 + lam w) D on simplex."""
    grad = (w + lam / 2.0) * D
    active = w > 1e-12
    if not np.any(active):
        return np.inf
    mu = grad[active].mean()
    gap = np.max(np.abs(grad[active] - mu))
    if np.any(~active):
        gap = max(gap, float(np.max(mu - grad[~active])))
    return gap


@given(st.integers(2, 7), st.floats(0.0, 2.0), st.integers(0, 10 ** 6))
@settings(max_examples=80, deadline=None)
def test_final_w_refinement_kkt_and_reference_solver(p, lam, seed):
    rng = np.random.default_rng(seed)
    D = rng.uniform(0.05, 5.0, size=p)
    U = np.zeros((1, p))
    X = np.sqrt(D)[None, :]
    w = final_w_refinement(X, U, lam)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)
    assert _refinement_kkt_gap(w, D, lam) <= 1e-10

    def h(v):
        return 0.5 * np.sum((v * v + lam * v) * D)

    res = minimize(h, np.full(p, 1.0 / p), jac=lambda v: (v + lam / 2.0) * D,
                   bounds=[(0.0, 1.0)] * p,
                   constraints=[LinearConstraint(np.ones(p), 1.0, 1.0)],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert h(w) <= h(res.x) + 1e-9


# ----------------------------------------------------------------------
# full driver


def test_fit_gamma_zero_returns_data_and_uniform_weights():
    X, phi, psi = _problem(seed=1)
    state = fit(DataMatrix(X), phi, psi, Hyperparameters(gamma=0.0))
    assert state.converged and state.iterations == 1
    np.testing.assert_array_equal(state.U, X)
    np.testing.assert_allclose(state.w.values, np.full(15, 1.0 / 15.0),
                               rtol=0, atol=1e-15)


def test_fit_constant_matrix_is_fixed_immediately():
    X = np.ones((4, 4))
    phi = build_affinities(X, 2, 1.0, scale_dim=4)
    psi = build_affinities(X.T, 2, 1.0, scale_dim=4)
    state = fit(DataMatrix(X), phi, psi, Hyperparameters(gamma=1.0))
    assert state.converged and state.iterations == 1
    np.testing.assert_allclose(state.U, X, rtol=0, atol=1e-10)
    np.testing.assert_allclose(state.w.values, 0.25, rtol=0, atol=1e-12)


@pytest.mark.parametrize("gamma,lam", [(0.5, 0.0), (5.0, 0.0), (2.0, 0.05)])
def test_fit_objective_trace_monotone(gamma, lam):
    for seed in range(4):
        X, phi, psi = _problem(seed=seed)
        hp = Hyperparameters(gamma=gamma, lam=lam)
        state = fit(DataMatrix(X), phi, psi, hp)
        trace = np.asarray(state.objective_trace)
        assert trace.size == state.iterations + 2
        assert np.all(np.diff(trace) <= 1e-8), (gamma, lam, seed)
        assert np.all(state.w.values >= 0)
        assert state.w.values.sum() == pytest.approx(1.0, abs=1e-10)


def test_fit_reaches_fixed_point():
    X, phi, psi = _problem(seed=7)
    # moderate fusion: weak penalties leave the data coupling at its
    # 1/p^2 floor and the loop would need far more than the default
    # iteration budget to settle
    hp = Hyperparameters(gamma=20.0)
    cfg = PalmConfig()
    state = fit(DataMatrix(X), phi, psi, hp, cfg)
    assert state.converged
    # one more loop pass from the converged pair must barely move U; the
    # pairing uses the last loop weights, since the terminal exact w step
    # deliberately jumps to the block minimizer
    prox = BiclusterProx(state.phi, state.psi, cfg.cvx)
    U_next, _, _ = u_step(X, state.U, state.w_iterate, hp, prox)
    assert (np.linalg.norm(U_next - state.U)
            <= cfg.tol * np.linalg.norm(state.U))


def test_fit_objective_beats_data_fit_start():
    X, phi, psi = _problem(seed=11)
    hp = Hyperparameters(gamma=3.0)
    state = fit(DataMatrix(X), phi, psi, hp)
    start = objective_value(X, X, np.full(15, 1.0 / 15.0), phi, psi,
                            hp.gamma, hp.lam)
    assert state.objective_trace[0] == pytest.approx(start)
    assert state.objective_trace[-1] <= start + 1e-10


def test_fit_adaptive_with_infinite_refresh_matches_plain():
    X, phi, psi = _problem(seed=5)
    hp = Hyperparameters(gamma=1.5, k_row=4, k_col=4)
    plain = fit(DataMatrix(X), phi, psi, hp, PalmConfig(adaptive=False))
    lazy = fit(DataMatrix(X), phi, psi, hp,
               PalmConfig(adaptive=True, refresh_affinities_every=math.inf))
    np.testing.assert_array_equal(plain.U, lazy.U)
    np.testing.assert_array_equal(plain.w.values, lazy.w.values)
    assert plain.objective_trace == lazy.objective_trace


def test_fit_adaptive_refresh_updates_graphs():
    X, phi, psi = _problem(seed=9, noise=1.5)
    hp = Hyperparameters(gamma=2.0, k_row=4, k_col=4)
    state = fit(DataMatrix(X), phi, psi, hp,
                PalmConfig(adaptive=True, refresh_affinities_every=1))
    assert state.iterations >= 2
    assert any(d["affinities_refreshed"] for d in state.diagnostics)
    assert state.phi is not phi and state.psi is not psi
    assert is_connected(state.phi) and is_connected(state.psi)
    assert np.all(np.isfinite(state.objective_trace))
    assert np.all(np.isfinite(state.U))


def test_fit_rejects_bad_inputs():
    X, phi, psi = _problem()
    with pytest.raises(ValueError, match="dimension"):
        fit(DataMatrix(X[:10]), phi, psi, Hyperparameters(gamma=1.0))
    mask = np.ones_like(X, dtype=bool)
    mask[0, 0] = False
    with pytest.raises(ValueError, match="complete"):
        fit(DataMatrix(X, mask=mask), phi, psi, Hyperparameters(gamma=1.0))
    with pytest.raises(ValueError, match="neighbor"):
        fit(DataMatrix(X), phi, psi, Hyperparameters(gamma=1.0, k_row=25),
            PalmConfig(adaptive=True))


def test_fit_repairs_disconnected_input_graphs(caplog):
    X, _, psi = _problem(seed=2)
    # graph over rows with two components
    from bicoclust.core import AffinityGraph
    n = X.shape[0]
    idx = [i for i in range(n - 1) if i != n // 2 - 1]  # skip one link
    rows = AffinityGraph.from_arrays(n, np.array(idx), np.array(idx) + 1,
                                     np.full(len(idx), 0.1))
    assert not is_connected(rows)
    with caplog.at_level("WARNING", logger="bicoclust.graph"):
        state = fit(DataMatrix(X), rows, psi, Hyperparameters(gamma=0.5))
    assert is_connected(state.phi)
    assert any("bridg" in r.message or "connect" in r.message
               for r in caplog.records)


def test_palm_config_validation():
    with pytest.raises(ValueError):
        PalmConfig(tol=0.0)
    with pytest.raises(ValueError):
        PalmConfig(refresh_affinities_every=0)
    with pytest.raises(ValueError):
        PalmConfig(refresh_affinities_every=2.5)
    PalmConfig(refresh_affinities_every=math.inf)  # allowed
