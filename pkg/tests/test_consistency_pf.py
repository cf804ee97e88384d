import numpy as np
import pytest

from mflqg import (
    build_model,
    build_pf_strategy,
    fit_loglog_slope,
    solve_limiting_mean_field_sde,
    solve_pf_consistency,
)
from mflqg.consistency_pf import _limit_sde_paths
from conftest import make_pf_config


def solve(**overrides):
    model = build_model(make_pf_config(**overrides))
    return model, solve_pf_consistency(model)


# -- pipeline oracles ----------------------------------------------------------


def test_zero_cost_data_gives_zero_solution():
    model, cons = solve(Q=0.0, G=0.0, m=0.0, A=0.3, alpha=0.2)
    for path in (
        cons.control_riccati,
        cons.aggregate_riccati,
        cons.mean_riccati,
        cons.offset,
        cons.mean_feedback,
        cons.mean_intercept,
    ):
        np.testing.assert_array_equal(path.values, 0.0)
    # Mean ODE degenerates to exponential growth at rate A + alpha.
    exact = 1.0 * np.exp(0.5 * model.grid.nodes)
    assert np.max(np.abs(cons.mean_path.values - exact)) < 1e-10


def test_aggregate_riccati_bernoulli_oracle():
    # A=0, alpha=0, B=R=1, G=1, Q arbitrary: the aggregate equation is the
    # Bernoulli one with solution 1/(2-t).
    model, cons = solve(G=1.0, Q=0.0)
    exact = 1.0 / (2.0 - model.grid.nodes)
    assert np.max(np.abs(cons.aggregate_riccati.values - exact)) < 1e-8
    assert cons.aggregate_riccati.values[0] == pytest.approx(0.5, abs=1e-8)


def test_control_riccati_tanh_oracle():
    model, cons = solve(Q=1.0, G=0.0)
    exact = np.tanh(1.0 - model.grid.nodes)
    assert np.max(np.abs(cons.control_riccati.values - exact)) < 1e-8
    assert cons.control_riccati.values[0] == pytest.approx(np.tanh(1.0), abs=1e-8)


def test_terminal_conditions():
    _, cons = solve(Q=2.0, G=0.7, m=0.4, alpha=0.3, A=-0.1)
    assert cons.control_riccati.values[-1] == pytest.approx(0.7)
    assert cons.aggregate_riccati.values[-1] == pytest.approx(0.7)
    assert cons.mean_riccati.values[-1] == pytest.approx(0.0, abs=1e-14)
    assert cons.offset.values[-1] == pytest.approx(0.0, abs=1e-14)
    assert cons.mean_path.values[0] == pytest.approx(1.0)


# -- structural identities ------------------------------------------------------


def test_aggregate_decomposition_identity():
    _, cons = solve(Q=1.5, G=0.5, m=0.3, alpha=0.6, A=-0.2)
    gap = (
        cons.aggregate_riccati.values
        - cons.control_riccati.values
        - cons.mean_riccati.values
    )
    assert np.max(np.abs(gap)) <= 1e-10


def test_adjoint_noise_gain_identity():
    model, cons = solve(Q=1.5, G=0.5, sigma=0.37)
    expected = cons.control_riccati.values * model.table.values("sigma")
    np.testing.assert_array_equal(cons.adjoint_noise_gain.values, expected)


def test_zero_drift_offset_when_m_zero():
    model, cons = solve(Q=1.0, G=0.5, m=0.0, alpha=0.4)
    np.testing.assert_array_equal(cons.offset.values, 0.0)
    np.testing.assert_array_equal(cons.mean_intercept.values, model.table.values("m"))


def test_nonnegative_riccati_paths():
    _, cons = solve(Q=2.0, G=1.0, alpha=0.5, A=0.2)
    assert np.min(cons.control_riccati.values) >= -1e-12
    assert np.min(cons.aggregate_riccati.values) >= -1e-12


def _fd4(values, h):
    """Interior 4th-order central difference; valid on nodes 2..M-2."""
    return (
        -values[4:] + 8.0 * values[3:-1] - 8.0 * values[1:-3] + values[:-4]
    ) / (12.0 * h)


def _pf_residuals(model, cons):
    """Node-wise residuals of the three backward consistency equations."""
    h = model.grid.h
    t = model.table
    A = t.values("A")
    br = t.values("B") ** 2 / t.values("R")
    Q = t.values("Q")
    mm = t.values("m")
    alpha = t.alpha
    p = cons.control_riccati.values
    phat = cons.mean_riccati.values
    phi = cons.offset.values
    a_t = cons.mean_feedback.values
    b_t = cons.mean_intercept.values
    sl = slice(2, -2)
    r1 = _fd4(p, h) + 2 * A[sl] * p[sl] - br[sl] * p[sl] ** 2 + Q[sl]
    r2 = (
        _fd4(phat, h)
        + phat[sl] * (2 * A[sl] + alpha - a_t[sl] - br[sl] * p[sl])
        + alpha * p[sl]
        - Q[sl]
    )
    r3 = (
        _fd4(phi, h)
        + (A[sl] - br[sl] * p[sl]) * phi[sl]
        + phat[sl] * b_t[sl]
        + p[sl] * mm[sl]
    )
    return r1, r2, r3


def test_consistency_residual_order():
    errs = {1: [], 2: [], 3: []}
    steps = [125, 250, 500, 1000]
    for M in steps:
        model = build_model(
            make_pf_config(Q=2.0, G=0.8, m=0.5, alpha=0.7, A=-0.3, M=M)
        )
        cons = solve_pf_consistency(model)
        for i, r in enumerate(_pf_residuals(model, cons), start=1):
            errs[i].append(np.max(np.abs(r)))
    for i in (1, 2, 3):
        slope, _ = fit_loglog_slope(list(zip(steps, errs[i])))
        assert -slope >= 3.8, f"equation {i}: observed order {-slope:.2f}"


def test_strategy_matches_adjoint_ansatz(rng):
    model, cons = solve(Q=1.0, G=0.5, m=0.3, alpha=0.4, A=-0.1)
    strat = build_pf_strategy(cons)
    table = model.table
    rb = table.values("B") / table.values("R")
    for _ in range(20):
        k = int(rng.integers(0, model.grid.steps + 1))
        xhat = float(rng.normal())
        u = strat.control(k, xhat)
        adj = (
            cons.control_riccati.values[k] * xhat
            + cons.mean_riccati.values[k] * cons.mean_path.values[k]
            + cons.offset.values[k]
        )
        assert u == pytest.approx(-rb[k] * adj, rel=1e-12, abs=1e-14)


def test_zero_consistency_gives_zero_strategy():
    _, cons = solve(Q=0.0, G=0.0, m=0.0)
    strat = build_pf_strategy(cons)
    np.testing.assert_array_equal(strat.gain_filter.values, 0.0)
    np.testing.assert_array_equal(strat.gain_mean.values, 0.0)
    np.testing.assert_array_equal(strat.offset.values, 0.0)


def test_constant_case_gain_composition():
    # Both Riccati paths have closed forms at A=0, B=R=1; the control at
    # t=0 with filter value 1 and mean 1 composes them.
    model, cons = solve(Q=0.0, G=1.0)
    strat = build_pf_strategy(cons)
    u = strat.control(0, 1.0)
    pi0 = 0.5  # 1/(2-0)
    p0 = cons.control_riccati.values[0]
    assert u == pytest.approx(-(p0 + (pi0 - p0) * 1.0), abs=1e-8)


# -- limiting mean-field SDE -----------------------------------------------------


def test_limiting_sde_noiseless_matches_mean_ode():
    model, cons = solve(Q=1.0, G=0.5, m=0.2, alpha=0.4, sigma_tilde=0.0, M=500)
    path = solve_limiting_mean_field_sde(cons, np.zeros(model.grid.steps))
    # Euler vs RK4 discrepancy is O(h); allow ten grid steps' worth.
    tol = 10.0 * model.grid.h
    assert np.max(np.abs(path.values - cons.mean_path.values)) < tol


def test_limiting_sde_initial_condition(rng):
    model, cons = solve(Q=1.0, G=0.5)
    for _ in range(5):
        dW = rng.normal(0, np.sqrt(model.grid.h), model.grid.steps)
        path = solve_limiting_mean_field_sde(cons, dW)
        assert path.values[0] == model.table.x_init


def test_limiting_sde_monte_carlo_mean():
    model = build_model(
        make_pf_config(Q=1.0, G=0.5, m=0.2, alpha=0.4, sigma_tilde=0.3, M=200)
    )
    cons = solve_pf_consistency(model)
    rng = np.random.default_rng(42)
    n_paths = 100_000
    dW = rng.normal(0.0, np.sqrt(model.grid.h), size=(n_paths, model.grid.steps))
    paths = _limit_sde_paths(cons, dW)
    terminal = paths[:, -1]
    se = terminal.std(ddof=1) / np.sqrt(n_paths)
    # Euler weak bias is O(h); include it in the budget alongside 3 SE.
    euler_allowance = 5.0 * model.grid.h
    assert abs(terminal.mean() - cons.mean_path.values[-1]) < 3 * se + euler_allowance
