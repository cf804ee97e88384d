import numpy as np
import pytest

from mflqg import (
    DeviationSpec,
    PopulationConfig,
    InformationMode,
    build_model,
    build_pf_strategy,
    build_po_strategy,
    estimate_cost,
    generate_noise,
    simulate_pf_population,
    simulate_po_population,
    solve_pf_consistency,
    solve_po_consistency,
)
from conftest import make_pf_config, make_po_config


def pf_setup(**overrides):
    model = build_model(make_pf_config(**overrides))
    cons = solve_pf_consistency(model)
    return model, cons, build_pf_strategy(cons)


def po_setup(**overrides):
    model = build_model(make_po_config(**overrides))
    cons = solve_po_consistency(model)
    return model, cons, build_po_strategy(cons)


def pf_config(N=8, reps=1, seed=7):
    return PopulationConfig(N=N, reps=reps, seed=seed, mode=InformationMode.PARTIAL_FILTRATION)


def po_config(N=8, reps=1, seed=7):
    return PopulationConfig(N=N, reps=reps, seed=seed, mode=InformationMode.PARTIAL_OBSERVATION)


# -- noise generation ------------------------------------------------------------


def test_noise_reproducible_from_seed(pf_model):
    cfg = pf_config(N=5, seed=99)
    b1 = generate_noise(cfg, pf_model.grid, rep=3)
    b2 = generate_noise(cfg, pf_model.grid, rep=3)
    np.testing.assert_array_equal(b1.dW, b2.dW)
    np.testing.assert_array_equal(b1.dWi, b2.dWi)


def test_noise_differs_across_reps_and_seeds(pf_model):
    cfg = pf_config(N=3, seed=99)
    b1 = generate_noise(cfg, pf_model.grid, rep=0)
    b2 = generate_noise(cfg, pf_model.grid, rep=1)
    b3 = generate_noise(pf_config(N=3, seed=100), pf_model.grid, rep=0)
    assert not np.array_equal(b1.dWi, b2.dWi)
    assert not np.array_equal(b1.dWi, b3.dWi)


def test_noise_increment_variance(pf_model):
    h = pf_model.grid.h
    draws = []
    for rep in range(40):
        b = generate_noise(pf_config(N=4, seed=5), pf_model.grid, rep=rep)
        draws.append(b.dW)
    flat = np.concatenate(draws)
    n = flat.size
    sample_var = flat.var(ddof=1)
    rel_se = np.sqrt(2.0 / n)
    assert abs(sample_var - h) / h <= 5 * rel_se


def test_noise_streams_uncorrelated(pf_model):
    bundles = [generate_noise(pf_config(N=2, seed=8), pf_model.grid, rep=r) for r in range(20)]
    common = np.concatenate([b.dW for b in bundles])
    agent0 = np.concatenate([b.dWi[0] for b in bundles])
    agent1 = np.concatenate([b.dWi[1] for b in bundles])
    n = common.size
    for a, b in ((common, agent0), (common, agent1), (agent0, agent1)):
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) <= 4.0 / np.sqrt(n)


def test_observation_noise_only_in_po_mode(pf_model):
    assert generate_noise(pf_config(), pf_model.grid).dVi is None
    assert generate_noise(po_config(), pf_model.grid).dVi is not None


def test_identical_agent_streams_coincide(pf_model):
    cfg = pf_config(N=3)
    b = generate_noise(cfg, pf_model.grid, agent_streams=[0, 0, 1])
    np.testing.assert_array_equal(b.dWi[0], b.dWi[1])
    assert not np.array_equal(b.dWi[0], b.dWi[2])


def test_permuted_agent_streams_permute_rows(pf_model):
    cfg = pf_config(N=4)
    base = generate_noise(cfg, pf_model.grid)
    perm = [2, 0, 3, 1]
    permuted = generate_noise(cfg, pf_model.grid, agent_streams=perm)
    np.testing.assert_array_equal(permuted.dWi, base.dWi[perm])


# -- partial-filtration population -------------------------------------------------


def test_pf_deterministic_symmetric_population():
    # No noise, no cost weights: zero strategy and identical agents growing
    # at rate A + alpha.
    model, cons, strat = pf_setup(
        Q=0.0, G=0.0, m=0.0, sigma=0.0, sigma_tilde=0.0, A=0.1, alpha=0.2, M=1000
    )
    noise = generate_noise(pf_config(N=4), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    exact = np.exp(0.3 * model.grid.nodes)
    np.testing.assert_array_equal(traj.controls, 0.0)
    for i in range(4):
        assert np.max(np.abs(traj.states[:, i] - exact)) < 1e-4
    np.testing.assert_array_equal(traj.states[:, 0], traj.state_avg)


def test_pf_single_agent_average_is_itself():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, M=200)
    noise = generate_noise(pf_config(N=1), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    np.testing.assert_array_equal(traj.state_avg, traj.states[:, 0])


def test_pf_average_recomputable_bitwise():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, m=0.2, M=200)
    noise = generate_noise(pf_config(N=16), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    np.testing.assert_array_equal(traj.state_avg, traj.states.mean(axis=1))
    np.testing.assert_array_equal(traj.filter_avg, traj.filters.mean(axis=1))


def test_pf_initial_conditions():
    model, cons, strat = pf_setup(Q=1.0, M=200)
    noise = generate_noise(pf_config(N=6), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    np.testing.assert_array_equal(traj.states[0], 1.0)
    np.testing.assert_array_equal(traj.filters[0], 1.0)
    assert traj.limit_mean[0] == 1.0


def test_pf_exchangeability_under_stream_permutation():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, M=200)
    cfg = pf_config(N=4)
    perm = [3, 1, 0, 2]
    t_base = simulate_pf_population(model, strat, generate_noise(cfg, model.grid))
    t_perm = simulate_pf_population(
        model, strat, generate_noise(cfg, model.grid, agent_streams=perm)
    )
    np.testing.assert_allclose(t_perm.states, t_base.states[:, perm], atol=1e-10)
    np.testing.assert_allclose(t_perm.state_avg, t_base.state_avg, atol=1e-10)


def test_pf_identical_streams_give_identical_paths():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, M=200)
    noise = generate_noise(pf_config(N=2), model.grid, agent_streams=[0, 0])
    traj = simulate_pf_population(model, strat, noise)
    np.testing.assert_array_equal(traj.states[:, 0], traj.states[:, 1])
    np.testing.assert_array_equal(traj.filters[:, 0], traj.filters[:, 1])


def test_pf_deviation_changes_only_tagged_agent_control():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, M=100)
    noise = generate_noise(pf_config(N=5), model.grid)
    base = simulate_pf_population(model, strat, noise)
    dev = simulate_pf_population(
        model, strat, noise, deviation=DeviationSpec.shifted(0.5, agent=2)
    )
    np.testing.assert_array_equal(dev.controls[:, 2], base.controls[:, 2] + 0.5)
    # Filters are decoupled from controls; other agents keep the same feedback
    # applied to the same filters.
    np.testing.assert_array_equal(dev.filters, base.filters)
    for j in (0, 1, 3, 4):
        np.testing.assert_array_equal(dev.controls[:, j], base.controls[:, j])


def test_pf_idiosyncratic_average_mechanism():
    # The mean-square of the averaged idiosyncratic integral is the
    # integrated variance divided by N.
    model, cons, strat = pf_setup(M=50)
    N, reps = 32, 4000
    h = model.grid.h
    sums = np.empty(reps)
    for rep in range(reps):
        noise = generate_noise(pf_config(N=N, seed=31), model.grid, rep=rep)
        sums[rep] = noise.dWi.sum(axis=1).mean()
    sigma = 1.0  # unit loading; increments already carry variance h
    expected = sigma**2 * model.grid.horizon / N
    est = np.mean(sums**2)
    se = np.std(sums**2, ddof=1) / np.sqrt(reps)
    assert abs(est - expected) <= 4 * se


# -- costs -------------------------------------------------------------------------


def test_cost_zero_when_no_weights():
    model, cons, strat = pf_setup(Q=0.0, G=0.0, m=0.0, M=200)
    noise = generate_noise(pf_config(N=3), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    est = estimate_cost(traj, model, mode="population")
    assert est.mean == 0.0


def test_cost_constant_control_quadrature():
    # Q = 0, R = 1 and a constant open-loop control c: cost is exactly c^2 T.
    model, cons, strat = pf_setup(Q=0.0, G=0.0, m=0.0, M=400)
    noise = generate_noise(pf_config(N=3), model.grid)
    c = 0.7
    path = np.full(model.grid.steps + 1, c)
    traj = simulate_pf_population(
        model, strat, noise, deviation=DeviationSpec.open_loop(path, agent=0)
    )
    est = estimate_cost(traj, model, mode="population", agent=0)
    assert est.mean == pytest.approx(c**2 * model.grid.horizon, rel=1e-12)


def test_cost_estimate_stabilizes_under_doubling():
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, m=0.2, M=100)
    cfg = pf_config(N=8, seed=17)
    trajs = [
        simulate_pf_population(model, strat, generate_noise(cfg, model.grid, rep=r))
        for r in range(120)
    ]
    half = estimate_cost(trajs[:60], model)
    full = estimate_cost(trajs, model)
    combined = np.hypot(half.stderr, full.stderr)
    assert abs(half.mean - full.mean) <= 2 * combined


def test_cost_nonnegative(rng):
    model, cons, strat = pf_setup(Q=1.0, G=0.5, alpha=0.4, m=0.2, M=100)
    noise = generate_noise(pf_config(N=4, seed=int(rng.integers(1e6))), model.grid)
    traj = simulate_pf_population(model, strat, noise)
    assert estimate_cost(traj, model, mode="population").mean >= 0.0
    assert estimate_cost(traj, model, mode="limiting").mean >= 0.0


# -- noisy-observation population ---------------------------------------------------


def test_po_degenerate_sensor_filter_tracks_state_exactly():
    # With no sensor and no noise at all, the filter update equals the state
    # update, so both coincide along the whole path.
    model, cons, strat = po_setup(
        Q=1.0, G=0.5, m=0.2, alpha=0.3, A=-0.1,
        sigma=0.0, sigma_tilde=0.0, H=0.0, H_tilde=0.0, h=0.0, M=200,
    )
    noise = generate_noise(po_config(N=4), model.grid)
    traj = simulate_po_population(model, strat, cons, noise)
    assert np.max(np.abs(traj.states - traj.filters)) < 1e-10
    assert np.max(np.abs(traj.state_avg - traj.limit_mean)) < 1e-10


def test_po_filter_ignores_idiosyncratic_noise_without_sensor():
    # H = 0 cuts the innovation coupling: the filter path is driven by the
    # common noise only.
    model, cons, strat = po_setup(
        Q=1.0, G=0.5, sigma=0.4, sigma_tilde=0.2, H=0.0, M=200
    )
    cfg = po_config(N=3, seed=21)
    n1 = generate_noise(cfg, model.grid, rep=0)
    n2 = generate_noise(cfg, model.grid, rep=1)
    n2 = type(n2)(
        seed=n2.seed, rep=n2.rep, grid=n2.grid, dW=n1.dW, dWi=n2.dWi, dVi=n2.dVi
    )
    t1 = simulate_po_population(model, strat, cons, n1)
    t2 = simulate_po_population(model, strat, cons, n2)
    np.testing.assert_array_equal(t1.filters, t2.filters)
    assert not np.array_equal(t1.states, t2.states)


def test_po_innovation_increment_variance():
    model, cons, strat = po_setup(
        Q=1.0, G=0.3, m=0.1, alpha=0.1, A=-0.5,
        sigma=0.4, sigma_tilde=0.1, H=0.3, H_tilde=0.1, h=0.05, M=100,
    )
    cfg = po_config(N=16, seed=12)
    incs = []
    for rep in range(200):
        traj = simulate_po_population(
            model, strat, cons, generate_noise(cfg, model.grid, rep=rep),
            with_limits=False,
        )
        incs.append(np.diff(traj.innovations[:, 0]))
    flat = np.concatenate(incs)
    n = flat.size
    var = flat.var(ddof=1)
    rel_se = np.sqrt(2.0 / n)
    assert abs(var - model.grid.h) / model.grid.h <= 5 * rel_se


def test_po_observations_accumulate_increments():
    model, cons, strat = po_setup(
        Q=1.0, G=0.3, sigma=0.4, H=0.5, H_tilde=0.2, h=0.1, M=100
    )
    noise = generate_noise(po_config(N=3), model.grid)
    traj = simulate_po_population(model, strat, cons, noise)
    h = model.grid.h
    t = model.table
    drift = (
        t.values("H")[:-1] * traj.states[:-1, 1]
        + t.values("H_tilde")[:-1] * traj.state_avg[:-1]
        + t.values("h")[:-1]
    )
    expected = np.cumsum(drift * h + noise.dVi[1])
    np.testing.assert_allclose(traj.observations[1:, 1], expected, atol=1e-12)


def test_po_deviation_feeds_back_into_filter():
    # In observation mode the tagged agent's filter depends on its control,
    # so a deviation perturbs its filter path (unlike the PF case).
    model, cons, strat = po_setup(Q=1.0, G=0.5, sigma=0.4, H=0.8, M=100)
    noise = generate_noise(po_config(N=4), model.grid)
    base = simulate_po_population(model, strat, cons, noise)
    dev = simulate_po_population(
        model, strat, cons, noise, deviation=DeviationSpec.shifted(0.5, agent=1)
    )
    assert not np.array_equal(base.filters[:, 1], dev.filters[:, 1])
    np.testing.assert_array_equal(base.filters[:, 0], dev.filters[:, 0])
