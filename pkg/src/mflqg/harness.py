"""Monte Carlo studies: convergence rates, unilateral-deviation gaps, stationarity.

All studies chunk replications with fixed chunk boundaries and reduce partial
results in chunk order, so output is bit-identical for any thread count.
Noise is derived from (seed, replication, role), independent of chunking.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .consistency_pf import build_pf_strategy, solve_pf_consistency
from .consistency_po import build_po_strategy, solve_po_consistency
from .errors import DegenerateData, InsufficientReplications
from .model import InformationMode, Model, PopulationConfig
from .population import (
    DeviationSpec,
    _draw_agent_block,
    _draw_common,
    _noise_block,
    _simulate_pf_core,
    _simulate_po_core,
    _trapezoid_weights,
)

DEFAULT_N_VALUES = (16, 64, 256, 1024)
DEFAULT_REPS = 400

# Quantity keys of the convergence study (population vs limiting system).
CONVERGENCE_QUANTITIES = (
    "filter_avg_dev",  # sup_t E|filter average - limiting mean|^2
    "limit_avg_dev",  # sup_t E|limiting-state average - limiting state|^2
    "pop_avg_dev",  # sup_t E|population average - limiting state|^2
    "agent_state_dev",  # sup_t E|agent state - its limiting state|^2
    "agent_sq_diff",  # sup_t E| |agent state|^2 - |limiting state|^2 |
)
# The literal cost gaps |J_pop - J_lim| (differences of expectations) and the
# pathwise absolute gaps E|cost_pop - cost_lim| under common random numbers.
# The pathwise gap upper-bounds the literal one and carries the per-agent
# coupling scale, so it is the statistically stable rate-bearing quantity.
COST_GAP_QUANTITIES = (
    "cost_gap_equilibrium",
    "cost_gap_deviation",
    "cost_gap_equilibrium_abs",
    "cost_gap_deviation_abs",
)


def default_deviation_family(agent: int = 0) -> tuple[DeviationSpec, ...]:
    """Scaled and shifted deviations around the equilibrium control."""
    scales = (0.0, 0.5, 0.9, 1.1, 1.5)
    shifts = (-0.5, -0.1, 0.1, 0.5)
    return tuple(DeviationSpec.scaled(s, agent) for s in scales) + tuple(
        DeviationSpec.shifted(d, agent) for d in shifts
    )


# ---------------------------------------------------------------------------
# Slope fitting

_T975 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447, 7: 2.365}


def fit_loglog_slope(points) -> tuple[float, float]:
    """Least-squares slope of log(estimate) against log(N).

    Returns (slope, half_width) where the half-width is the 97.5% t-quantile
    times the slope standard error from the residual variance. Raises
    DegenerateData for fewer than 3 points, non-positive estimates, or a
    single distinct N.
    """
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise DegenerateData(f"need at least 3 points, got {len(pts)}")
    if any(v <= 0.0 for _, v in pts):
        raise DegenerateData("estimates must be positive for a log-log fit")
    ns = np.array([n for n, _ in pts])
    if np.unique(ns).size < 2:
        raise DegenerateData("all N equal")
    lx = np.log(ns)
    ly = np.log(np.array([v for _, v in pts]))
    lxc = lx - lx.mean()
    slope = float(np.dot(lxc, ly) / np.dot(lxc, lxc))
    intercept = float(ly.mean() - slope * lx.mean())
    resid = ly - (intercept + slope * lx)
    dof = len(pts) - 2
    if dof > 0 and np.dot(lxc, lxc) > 0:
        s2 = float(np.dot(resid, resid) / dof)
        se = math.sqrt(s2 / float(np.dot(lxc, lxc)))
        half = _T975.get(dof, 2.0) * se
    else:
        half = 0.0
    return slope, half


# ---------------------------------------------------------------------------
# Streaming recorders (per-chunk accumulators)


class _CostAccumulator:
    """Trapezoidal population/limiting cost of one tagged agent, per replication."""

    def __init__(self, model: Model, B: int, agent: int):
        table = model.table
        self.Q = table.values("Q")
        self.R = table.values("R")
        self.G = table.G
        self.w = _trapezoid_weights(model.grid)
        self.M = model.grid.steps
        self.agent = agent
        self.pop = np.zeros(B)
        self.lim = np.zeros(B)

    def record(self, k, x, u, xN, x0, xlim=None, ulim=None, **_):
        a = self.agent
        self.pop += self.w[k] * (
            self.Q[k] * (x[:, a] - xN) ** 2 + self.R[k] * u[:, a] ** 2
        )
        if xlim is not None:
            self.lim += self.w[k] * (
                self.Q[k] * (xlim[:, a] - x0) ** 2 + self.R[k] * ulim[:, a] ** 2
            )
        if k == self.M:
            self.pop += self.G * x[:, a] ** 2
            if xlim is not None:
                self.lim += self.G * xlim[:, a] ** 2


class _StudyRecorder:
    """Node-wise sums for the convergence quantities plus equilibrium costs."""

    def __init__(self, model: Model, B: int, agent: int, ref_mean: np.ndarray):
        M = model.grid.steps
        self.ref_mean = ref_mean  # deterministic benchmark for the filter average
        self.agent = agent
        self.sums = np.zeros((5, M + 1))
        self.sumsq = np.zeros((5, M + 1))
        self.cost = _CostAccumulator(model, B, agent)

    def record(self, k, x, xhat, u, xN, x0, xlim, ulim, favg=None, **_):
        a = self.agent
        ref = self.ref_mean[k] if favg is None else favg
        q1 = (xhat.mean(axis=1) - ref) ** 2
        q2 = (xlim.mean(axis=1) - x0) ** 2
        q3 = (xN - x0) ** 2
        q4 = (x[:, a] - xlim[:, a]) ** 2
        q5 = np.abs(x[:, a] ** 2 - xlim[:, a] ** 2)
        for i, q in enumerate((q1, q2, q3, q4, q5)):
            self.sums[i, k] += q.sum()
            self.sumsq[i, k] += (q * q).sum()
        self.cost.record(k, x=x, u=u, xN=xN, x0=x0, xlim=xlim, ulim=ulim)


class _FilterStatsRecorder:
    """Agent-averaged filter-error moments per node plus innovation moments."""

    def __init__(self, M: int, agent: int = 0):
        self.agent = agent
        self.mean_sum = np.zeros(M + 1)
        self.mean_sumsq = np.zeros(M + 1)
        self.sq_sum = np.zeros(M + 1)
        self.sq_sumsq = np.zeros(M + 1)
        self.innov_sum = 0.0
        self.innov_sumsq = 0.0
        self.innov_n = 0

    def record(self, k, x, xhat, dI=None, **_):
        e = x - xhat
        em = e.mean(axis=1)
        es = (e * e).mean(axis=1)
        self.mean_sum[k] += em.sum()
        self.mean_sumsq[k] += (em * em).sum()
        self.sq_sum[k] += es.sum()
        self.sq_sumsq[k] += (es * es).sum()
        if dI is not None:
            v = dI[:, self.agent]
            self.innov_sum += float(v.sum())
            self.innov_sumsq += float((v * v).sum())
            self.innov_n += v.size


def _mean_se(total, total_sq, n):
    mean = total / n
    var = np.maximum(total_sq / n - mean**2, 0.0) * (n / max(n - 1, 1))
    return mean, np.sqrt(var / n)


# ---------------------------------------------------------------------------
# Chunked execution


def _chunk_ranges(reps: int, chunk: int):
    return [(r0, min(reps, r0 + chunk)) for r0 in range(0, reps, chunk)]


def _default_chunk(N: int, M: int, budget_bytes: float = 48e6) -> int:
    return max(1, int(budget_bytes / (max(N, 1) * max(M, 1) * 8)))


def _run_chunks(worker, reps: int, chunk: int, threads: int):
    ranges = _chunk_ranges(reps, chunk)
    if threads <= 1:
        return [worker(r0, r1) for r0, r1 in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda rr: worker(*rr), ranges))


def _solve_mode(model: Model):
    if model.mode is InformationMode.PARTIAL_OBSERVATION:
        cons = solve_po_consistency(model)
        strat = build_po_strategy(cons)
    else:
        cons = solve_pf_consistency(model)
        strat = build_pf_strategy(cons)
    return cons, strat


class _CostOnly:
    """Adapter exposing a cost accumulator through the recorder protocol."""

    def __init__(self, acc: _CostAccumulator):
        self.acc = acc

    def record(self, k, **s):
        self.acc.record(
            k, x=s["x"], u=s["u"], xN=s["xN"], x0=s["x0"], xlim=s["xlim"], ulim=s["ulim"]
        )


def _run_core(model, cons, strat, dW, dWi, dVi, deviation, recorder, with_limits=True):
    if model.mode is InformationMode.PARTIAL_OBSERVATION:
        _simulate_po_core(
            model, strat, cons, dW, dWi, dVi, deviation, recorder, with_limits
        )
    else:
        _simulate_pf_core(model, strat, dW, dWi, deviation, recorder, with_limits)
    return recorder


# ---------------------------------------------------------------------------
# Convergence study


@dataclass(frozen=True)
class StudyResult:
    """Per-N estimates and fitted log-log slopes for the convergence quantities."""

    mode: str
    N_values: tuple[int, ...]
    reps: int
    seed: int
    estimates: dict[str, tuple[tuple[float, float], ...]]
    slopes: dict[str, tuple[float, float] | None]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "N_values": list(self.N_values),
            "reps": self.reps,
            "seed": self.seed,
            "estimates": {
                name: [[est, se] for est, se in vals]
                for name, vals in self.estimates.items()
            },
            "slopes": {
                name: (list(sl) if sl is not None else None)
                for name, sl in self.slopes.items()
            },
        }


def run_convergence_study(
    model: Model,
    N_values=DEFAULT_N_VALUES,
    reps: int = DEFAULT_REPS,
    seed: int | None = None,
    deviation: DeviationSpec | None = None,
    threads: int = 1,
    chunk: int | None = None,
) -> StudyResult:
    """Estimate the population-vs-limiting convergence quantities over N.

    For each N the equilibrium population is simulated with the limiting
    system advanced from the same noise; sup-over-grid mean-square gaps and
    the equilibrium/deviation cost gaps are estimated, then log-log slopes
    are fitted over N. ``deviation`` is the fixed perturbation used for the
    deviation cost gap (default: the equilibrium control shifted by +0.5).
    """
    if seed is None:
        seed = model.population.seed
    if deviation is None:
        deviation = DeviationSpec.shifted(0.5)
    agent = deviation.agent
    cons, strat = _solve_mode(model)
    M = model.grid.steps
    ref_mean = (
        cons.mean_path.values
        if model.mode is InformationMode.PARTIAL_FILTRATION
        else None  # PO benchmark is the stochastic limiting filter average
    )

    names = CONVERGENCE_QUANTITIES + COST_GAP_QUANTITIES
    per_quantity: dict[str, list[tuple[float, float]]] = {n: [] for n in names}

    for N in N_values:
        config = PopulationConfig(N=int(N), reps=reps, seed=seed, mode=model.mode)
        csize = chunk or _default_chunk(N, M)

        def worker(r0, r1):
            B = r1 - r0
            dW, dWi, dVi = _noise_block(config, model.grid, r0, B)
            bench = np.zeros(M + 1) if ref_mean is None else ref_mean
            study = _StudyRecorder(model, B, agent, bench)
            dev_cost = _CostAccumulator(model, B, agent)
            _run_core(model, cons, strat, dW, dWi, dVi, None, study)
            _run_core(model, cons, strat, dW, dWi, dVi, deviation, _CostOnly(dev_cost))
            return study, dev_cost

        parts = _run_chunks(worker, reps, csize, threads)

        sums = np.zeros((5, M + 1))
        sumsq = np.zeros((5, M + 1))
        eq_pop, eq_lim, dv_pop, dv_lim = [], [], [], []
        for study, dev_cost in parts:
            sums += study.sums
            sumsq += study.sumsq
            eq_pop.append(study.cost.pop)
            eq_lim.append(study.cost.lim)
            dv_pop.append(dev_cost.pop)
            dv_lim.append(dev_cost.lim)
        eq_pop = np.concatenate(eq_pop)
        eq_lim = np.concatenate(eq_lim)
        dv_pop = np.concatenate(dv_pop)
        dv_lim = np.concatenate(dv_lim)

        mean, se = _mean_se(sums, sumsq, reps)
        for i, name in enumerate(CONVERGENCE_QUANTITIES):
            k_star = int(np.argmax(mean[i]))
            est, est_se = float(mean[i, k_star]), float(se[i, k_star])
            # Degenerate (identically vanishing) quantities carry only float
            # dust; the relative-noise contract applies to real signals.
            if est > 1e-12 and est_se > 0.30 * est:
                raise InsufficientReplications(name, est, est_se)
            per_quantity[name].append((est, est_se))
        for name, diff in (
            ("cost_gap_equilibrium", eq_pop - eq_lim),
            ("cost_gap_deviation", dv_pop - dv_lim),
        ):
            est = float(abs(diff.mean()))
            est_se = float(diff.std(ddof=1) / math.sqrt(reps))
            per_quantity[name].append((est, est_se))
            adiff = np.abs(diff)
            per_quantity[name + "_abs"].append(
                (float(adiff.mean()), float(adiff.std(ddof=1) / math.sqrt(reps)))
            )

    slopes: dict[str, tuple[float, float] | None] = {}
    for name, vals in per_quantity.items():
        pts = [(n, est) for n, (est, _) in zip(N_values, vals)]
        if any(est <= 1e-12 for _, est in pts):
            slopes[name] = None  # degenerate: vanishing up to float/step dust
            continue
        try:
            slopes[name] = fit_loglog_slope(pts)
        except DegenerateData:
            slopes[name] = None

    return StudyResult(
        mode=model.mode.value,
        N_values=tuple(int(n) for n in N_values),
        reps=reps,
        seed=seed,
        estimates={n: tuple(v) for n, v in per_quantity.items()},
        slopes=slopes,
    )


# ---------------------------------------------------------------------------
# Unilateral-deviation (epsilon-Nash) study


@dataclass(frozen=True)
class DeviationGap:
    label: str
    cost: float  # population cost of the deviating agent
    cost_se: float
    cost_limit: float  # limiting-problem cost under the same deviation
    gap: float  # equilibrium cost minus deviation cost (positive: deviating helps)
    gap_se: float


@dataclass(frozen=True)
class NashGapReport:
    mode: str
    N_values: tuple[int, ...]
    reps: int
    seed: int
    equilibrium_cost: dict[int, tuple[float, float]]
    equilibrium_cost_limit: dict[int, tuple[float, float]]
    gaps: dict[int, tuple[DeviationGap, ...]]
    epsilon_raw: dict[int, float]
    epsilon: dict[int, float]  # clamped at 0
    epsilon_slope: tuple[float, float] | None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "N_values": list(self.N_values),
            "reps": self.reps,
            "seed": self.seed,
            "equilibrium_cost": {
                str(n): list(v) for n, v in self.equilibrium_cost.items()
            },
            "equilibrium_cost_limit": {
                str(n): list(v) for n, v in self.equilibrium_cost_limit.items()
            },
            "gaps": {
                str(n): [
                    {
                        "label": g.label,
                        "cost": g.cost,
                        "cost_se": g.cost_se,
                        "cost_limit": g.cost_limit,
                        "gap": g.gap,
                        "gap_se": g.gap_se,
                    }
                    for g in gs
                ]
                for n, gs in self.gaps.items()
            },
            "epsilon_raw": {str(n): v for n, v in self.epsilon_raw.items()},
            "epsilon": {str(n): v for n, v in self.epsilon.items()},
            "epsilon_slope": (
                list(self.epsilon_slope) if self.epsilon_slope is not None else None
            ),
        }


def run_nash_gap_study(
    model: Model,
    N_values=DEFAULT_N_VALUES,
    deviations: tuple[DeviationSpec, ...] | None = None,
    reps: int = DEFAULT_REPS,
    seed: int | None = None,
    threads: int = 1,
    chunk: int | None = None,
) -> NashGapReport:
    """Estimate unilateral-deviation cost gaps under common random numbers.

    For each N, the equilibrium population and every deviation scenario are
    simulated on identical noise; the per-replication cost differences give
    low-variance gap estimates. epsilon(N) is the largest positive gap.
    """
    if seed is None:
        seed = model.population.seed
    if deviations is None:
        deviations = default_deviation_family()
    agent = deviations[0].agent
    if any(d.agent != agent for d in deviations):
        raise ValueError("all deviations must target the same agent")
    cons, strat = _solve_mode(model)
    M = model.grid.steps

    equilibrium_cost: dict[int, tuple[float, float]] = {}
    equilibrium_cost_limit: dict[int, tuple[float, float]] = {}
    gaps: dict[int, tuple[DeviationGap, ...]] = {}
    epsilon_raw: dict[int, float] = {}
    epsilon: dict[int, float] = {}

    for N in N_values:
        config = PopulationConfig(N=int(N), reps=reps, seed=seed, mode=model.mode)
        csize = chunk or _default_chunk(N, M)

        def worker(r0, r1):
            B = r1 - r0
            dW, dWi, dVi = _noise_block(config, model.grid, r0, B)

            def run(deviation):
                acc = _CostAccumulator(model, B, agent)
                _run_core(model, cons, strat, dW, dWi, dVi, deviation, _CostOnly(acc))
                return acc

            eq = run(None)
            devs = [run(d) for d in deviations]
            return eq, devs

        parts = _run_chunks(worker, reps, csize, threads)
        eq_pop = np.concatenate([eq.pop for eq, _ in parts])
        eq_lim = np.concatenate([eq.lim for eq, _ in parts])
        equilibrium_cost[int(N)] = (
            float(eq_pop.mean()),
            float(eq_pop.std(ddof=1) / math.sqrt(reps)),
        )
        equilibrium_cost_limit[int(N)] = (
            float(eq_lim.mean()),
            float(eq_lim.std(ddof=1) / math.sqrt(reps)),
        )

        rows = []
        for j, dev in enumerate(deviations):
            dv_pop = np.concatenate([devs[j].pop for _, devs in parts])
            dv_lim = np.concatenate([devs[j].lim for _, devs in parts])
            paired = eq_pop - dv_pop
            rows.append(
                DeviationGap(
                    label=dev.label,
                    cost=float(dv_pop.mean()),
                    cost_se=float(dv_pop.std(ddof=1) / math.sqrt(reps)),
                    cost_limit=float(dv_lim.mean()),
                    gap=float(paired.mean()),
                    gap_se=float(paired.std(ddof=1) / math.sqrt(reps)),
                )
            )
        gaps[int(N)] = tuple(rows)
        raw = max(r.gap for r in rows)
        epsilon_raw[int(N)] = raw
        epsilon[int(N)] = max(0.0, raw)

    pts = [(n, epsilon[n]) for n in (int(v) for v in N_values)]
    try:
        eps_slope = fit_loglog_slope(pts)
    except DegenerateData:
        eps_slope = None

    return NashGapReport(
        mode=model.mode.value,
        N_values=tuple(int(n) for n in N_values),
        reps=reps,
        seed=seed,
        equilibrium_cost=equilibrium_cost,
        equilibrium_cost_limit=equilibrium_cost_limit,
        gaps=gaps,
        epsilon_raw=epsilon_raw,
        epsilon=epsilon,
        epsilon_slope=eps_slope,
    )


# ---------------------------------------------------------------------------
# Filter-consistency study (noisy-observation mode)


@dataclass(frozen=True)
class FilterStudyResult:
    N: int
    reps: int
    seed: int
    t: np.ndarray
    error_mean: np.ndarray
    error_mean_se: np.ndarray
    error_sq: np.ndarray
    error_sq_se: np.ndarray
    filter_variance: np.ndarray
    innovation_var: float
    innovation_var_se: float
    step: float


def run_po_filter_study(
    model: Model,
    reps: int | None = None,
    seed: int | None = None,
    threads: int = 1,
    chunk: int | None = None,
) -> FilterStudyResult:
    """Estimate filter-error moments and innovation variance at finite N.

    The error statistics are agent-averaged within each replication; standard
    errors are across replications. The innovation increments of one tagged
    agent are pooled over all steps for the variance estimate.
    """
    if model.mode is not InformationMode.PARTIAL_OBSERVATION:
        raise ValueError("filter study requires partial-observation mode")
    if seed is None:
        seed = model.population.seed
    if reps is None:
        reps = model.population.reps
    cons, strat = _solve_mode(model)
    N = model.population.N
    M = model.grid.steps
    config = PopulationConfig(N=N, reps=reps, seed=seed, mode=model.mode)
    csize = chunk or _default_chunk(N, M, budget_bytes=24e6)

    def worker(r0, r1):
        dW, dWi, dVi = _noise_block(config, model.grid, r0, r1 - r0)
        rec = _FilterStatsRecorder(M)
        _run_core(model, cons, strat, dW, dWi, dVi, None, rec, with_limits=False)
        return rec

    parts = _run_chunks(worker, reps, csize, threads)
    mean_sum = sum(p.mean_sum for p in parts)
    mean_sumsq = sum(p.mean_sumsq for p in parts)
    sq_sum = sum(p.sq_sum for p in parts)
    sq_sumsq = sum(p.sq_sumsq for p in parts)
    innov_sum = sum(p.innov_sum for p in parts)
    innov_sumsq = sum(p.innov_sumsq for p in parts)
    n_innov = sum(p.innov_n for p in parts)

    err_mean, err_mean_se = _mean_se(mean_sum, mean_sumsq, reps)
    err_sq, err_sq_se = _mean_se(sq_sum, sq_sumsq, reps)
    ivar = (innov_sumsq - innov_sum**2 / n_innov) / (n_innov - 1)
    ivar_se = ivar * math.sqrt(2.0 / n_innov)

    return FilterStudyResult(
        N=N,
        reps=reps,
        seed=seed,
        t=model.grid.nodes.copy(),
        error_mean=err_mean,
        error_mean_se=err_mean_se,
        error_sq=err_sq,
        error_sq_se=err_sq_se,
        filter_variance=cons.filter_variance.values.copy(),
        innovation_var=float(ivar),
        innovation_var_se=float(ivar_se),
        step=model.grid.h,
    )


# ---------------------------------------------------------------------------
# Stationarity of the limiting-problem optimum


@dataclass(frozen=True)
class StationarityResult:
    deltas: tuple[float, ...]
    one_sided: tuple[tuple[float, float], ...]  # (estimate, se) per delta
    central: tuple[tuple[float, float], ...]
    second_difference: tuple[tuple[float, float], ...]
    fitted_order: float
    oracle_gradient: float
    oracle_curvature: float


def stationarity_oracle(model: Model, v_nodes: np.ndarray) -> tuple[float, float]:
    """Deterministic first-derivative and curvature of the limiting cost.

    The directional derivative reduces to first moments (the direction is
    deterministic and the state response to it is the noiseless linear ODE);
    the curvature is the deterministic quadratic form of the response.
    """
    cons = solve_pf_consistency(model)
    strat = build_pf_strategy(cons)
    table = model.table
    grid = model.grid
    h = grid.h
    Q = table.values("Q")
    R = table.values("R")
    w = _trapezoid_weights(grid)

    # Response of the state to the direction: noiseless linear ODE via RK4
    # with stage values from the piecewise-linear interpolants.
    fA = table.interpolant("A")
    fB = table.interpolant("B")
    fv_nodes = np.asarray(v_nodes, dtype=float)

    def fv(t):
        return float(np.interp(t, grid.nodes, fv_nodes))

    def f(tt, vv):
        return fA(tt) * vv + fB(tt) * fv(tt)

    xv = np.empty(grid.steps + 1)
    xv[0] = 0.0
    v = 0.0
    for k in range(grid.steps):
        t = grid.nodes[k]
        k1 = f(t, v)
        k2 = f(t + 0.5 * h, v + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, v + 0.5 * h * k2)
        k4 = f(t + h, v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        xv[k + 1] = v

    # First moments: the mean of the equilibrium state and of the limiting
    # state coincide, so the tracking term drops out of the derivative.
    ex0 = cons.mean_path.values
    eu = (
        strat.gain_filter.values * ex0
        + strat.gain_mean.values * ex0
        + strat.offset.values
    )
    gradient = float(
        np.dot(w, 2.0 * R * eu * fv_nodes) + 2.0 * table.G * ex0[-1] * xv[-1]
    )
    curvature = float(
        np.dot(w, Q * xv**2 + R * fv_nodes**2) + table.G * xv[-1] ** 2
    )
    return gradient, curvature


def run_stationarity_check(
    model: Model,
    deltas=(0.1, 0.05, 0.025),
    reps: int = 200_000,
    seed: int | None = None,
    v_nodes=None,
    threads: int = 1,
    chunk: int = 50_000,
) -> StationarityResult:
    """Numerical directional-derivative check at the limiting-problem optimum.

    Simulates the limiting system under the equilibrium control and under
    symmetric perturbations (common random numbers), estimating the one-sided
    and central difference quotients of the cost and the second difference.
    The one-sided quotient decays linearly in the perturbation size at an
    optimum; ``fitted_order`` is its log-log slope against delta.
    """
    if seed is None:
        seed = model.population.seed
    deltas = tuple(float(d) for d in deltas)
    table = model.table
    grid = model.grid
    h = grid.h
    M = grid.steps
    if v_nodes is None:
        v_nodes = np.ones(M + 1)
    v_nodes = np.asarray(v_nodes, dtype=float)

    cons = solve_pf_consistency(model)
    strat = build_pf_strategy(cons)
    A = table.values("A")
    Bc = table.values("B")
    mc = table.values("m")
    sig = table.values("sigma")
    sigt = table.values("sigma_tilde")
    Q = table.values("Q")
    R = table.values("R")
    alpha = table.alpha
    gF = strat.gain_filter.values
    gM = strat.gain_mean.values
    off = strat.offset.values
    ex0 = cons.mean_path.values
    a_t = cons.mean_feedback.values
    b_t = cons.mean_intercept.values
    c1 = A + Bc * gF
    c2 = alpha + Bc * gM
    c3 = Bc * off + mc
    w = _trapezoid_weights(grid)
    D = len(deltas)

    def worker(r0, r1):
        B = r1 - r0
        dW = np.stack([_draw_common(seed, rep, grid) for rep in range(r0, r1)])
        dWi = np.stack(
            [
                _draw_agent_block(seed, rep, 1, 1, grid)[0]
                for rep in range(r0, r1)
            ]
        )
        xhat = np.full(B, table.x_init)
        x0 = np.full(B, table.x_init)
        xbar = np.full(B, table.x_init)
        xp = np.full((D, B), table.x_init)
        xm = np.full((D, B), table.x_init)
        cost_eq = np.zeros(B)
        cost_p = np.zeros((D, B))
        cost_m = np.zeros((D, B))
        dvec = np.array(deltas)[:, None]
        for k in range(M + 1):
            u = gF[k] * xhat + gM[k] * ex0[k] + off[k]
            up = u[None, :] + dvec * v_nodes[k]
            um = u[None, :] - dvec * v_nodes[k]
            cost_eq += w[k] * (Q[k] * (xbar - x0) ** 2 + R[k] * u**2)
            cost_p += w[k] * (Q[k] * (xp - x0[None, :]) ** 2 + R[k] * up**2)
            cost_m += w[k] * (Q[k] * (xm - x0[None, :]) ** 2 + R[k] * um**2)
            if k == M:
                cost_eq += table.G * xbar**2
                cost_p += table.G * xp**2
                cost_m += table.G * xm**2
                break
            dw = dW[:, k]
            dwi = dWi[:, k]
            xbar = (
                xbar
                + (A[k] * xbar + Bc[k] * u + alpha * x0 + mc[k]) * h
                + sig[k] * dwi
                + sigt[k] * dw
            )
            xp = (
                xp
                + (A[k] * xp + Bc[k] * up + alpha * x0[None, :] + mc[k]) * h
                + sig[k] * dwi[None, :]
                + sigt[k] * dw[None, :]
            )
            xm = (
                xm
                + (A[k] * xm + Bc[k] * um + alpha * x0[None, :] + mc[k]) * h
                + sig[k] * dwi[None, :]
                + sigt[k] * dw[None, :]
            )
            x0 = x0 + ((A[k] + alpha) * x0 - a_t[k] * ex0[k] + b_t[k]) * h + sigt[k] * dw
            xhat = xhat + (c1[k] * xhat + c2[k] * ex0[k] + c3[k]) * h + sig[k] * dwi
        return cost_eq, cost_p, cost_m

    parts = _run_chunks(worker, reps, chunk, threads)
    cost_eq = np.concatenate([p[0] for p in parts])
    cost_p = np.concatenate([p[1] for p in parts], axis=1)
    cost_m = np.concatenate([p[2] for p in parts], axis=1)

    one_sided, central, second = [], [], []
    for i, d in enumerate(deltas):
        dp = (cost_p[i] - cost_eq) / d
        dc = (cost_p[i] - cost_m[i]) / (2.0 * d)
        s2 = cost_p[i] + cost_m[i] - 2.0 * cost_eq
        one_sided.append(
            (float(dp.mean()), float(dp.std(ddof=1) / math.sqrt(reps)))
        )
        central.append((float(dc.mean()), float(dc.std(ddof=1) / math.sqrt(reps))))
        second.append((float(s2.mean()), float(s2.std(ddof=1) / math.sqrt(reps))))

    try:
        order, _ = fit_loglog_slope(
            [(1.0 / d, abs(est)) for d, (est, _) in zip(deltas, one_sided)]
        )
        order = -order
    except DegenerateData:
        order = float("nan")

    gradient, curvature = stationarity_oracle(model, v_nodes)
    return StationarityResult(
        deltas=deltas,
        one_sided=tuple(one_sided),
        central=tuple(central),
        second_difference=tuple(second),
        fitted_order=order,
        oracle_gradient=gradient,
        oracle_curvature=curvature,
    )
