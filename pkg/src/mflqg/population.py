"""Finite-N population simulation under the decentralized strategies.

Euler-Maruyama on the coupled agent system, with per-agent filters simulated
by their decoupled equations (partial filtration) or by the limiting-model
Kalman gain (noisy observation). The limiting reference system is advanced
from the same common-noise path so that convergence and cost-gap studies can
compare population and limiting quantities pathwise (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .consistency_pf import PFStrategy
from .consistency_po import POConsistency, POStrategy
from .model import InformationMode, Model, PopulationConfig, TimeGrid

_SEED_MASK = 0xFFFFFFFFFFFFFFFF
_ROLE_COMMON = 0
_ROLE_IDIOSYNCRATIC = 1
_ROLE_OBSERVATION = 2


# ---------------------------------------------------------------------------
# Noise generation


@dataclass(frozen=True)
class NoiseBundle:
    """Seeded Brownian increments for one replication on the grid.

    ``dW`` is the common stream (M,); ``dWi`` the per-agent idiosyncratic
    streams (N, M); ``dVi`` the observation-noise streams (N, M), present
    only when generated for the noisy-observation mode. Each increment is
    N(0, h); streams for distinct (agent, role) pairs are independent and
    the whole bundle is reproducible from (seed, rep).
    """

    seed: int
    rep: int
    grid: TimeGrid
    dW: np.ndarray
    dWi: np.ndarray
    dVi: np.ndarray | None

    @property
    def n_agents(self) -> int:
        return self.dWi.shape[0]


def _role_rng(seed: int, rep: int, role: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed & _SEED_MASK, rep, role))
    )


def _draw_common(seed, rep, grid):
    rng = _role_rng(seed, rep, _ROLE_COMMON)
    return rng.standard_normal(grid.steps) * math.sqrt(grid.h)


def _draw_agent_block(seed, rep, role, n_streams, grid):
    rng = _role_rng(seed, rep, role)
    return rng.standard_normal((n_streams, grid.steps)) * math.sqrt(grid.h)


def generate_noise(
    config: PopulationConfig,
    grid: TimeGrid,
    rep: int = 0,
    agent_streams=None,
) -> NoiseBundle:
    """Generate the reproducible increment bundle for one replication.

    ``agent_streams`` optionally assigns a sub-stream id to every agent
    (default: distinct ids 0..N-1). Agents sharing an id receive identical
    idiosyncratic/observation increments; permuting the ids permutes the
    corresponding rows.
    """
    N = config.N
    if agent_streams is None:
        streams = np.arange(N)
    else:
        streams = np.asarray(agent_streams, dtype=int)
        if streams.shape != (N,) or streams.min() < 0:
            raise ValueError("agent_streams must be N non-negative ids")
    n_ids = int(streams.max()) + 1

    dW = _draw_common(config.seed, rep, grid)
    dWi = _draw_agent_block(config.seed, rep, _ROLE_IDIOSYNCRATIC, n_ids, grid)[
        streams
    ]
    dVi = None
    if config.mode is InformationMode.PARTIAL_OBSERVATION:
        dVi = _draw_agent_block(config.seed, rep, _ROLE_OBSERVATION, n_ids, grid)[
            streams
        ]
    return NoiseBundle(seed=config.seed, rep=rep, grid=grid, dW=dW, dWi=dWi, dVi=dVi)


def _noise_block(config: PopulationConfig, grid: TimeGrid, rep_start: int, reps: int):
    """Stack per-replication bundles into batch arrays (independent of chunking)."""
    dW = np.empty((reps, grid.steps))
    dWi = np.empty((reps, config.N, grid.steps))
    dVi = None
    if config.mode is InformationMode.PARTIAL_OBSERVATION:
        dVi = np.empty((reps, config.N, grid.steps))
    for b in range(reps):
        bundle = generate_noise(config, grid, rep=rep_start + b)
        dW[b] = bundle.dW
        dWi[b] = bundle.dWi
        if dVi is not None:
            dVi[b] = bundle.dVi
    return dW, dWi, dVi


# ---------------------------------------------------------------------------
# Deviations


@dataclass(frozen=True)
class DeviationSpec:
    """A unilateral control deviation for one agent.

    The deviation acts on the equilibrium feedback value, so it stays adapted
    to the agent's own information: scaled (kappa * u), shifted (u + delta),
    a deterministic open-loop path, or the zero control.
    """

    kind: str
    agent: int = 0
    factor: float = 1.0
    shift: float = 0.0
    path: np.ndarray | None = None

    @staticmethod
    def scaled(factor: float, agent: int = 0) -> "DeviationSpec":
        return DeviationSpec(kind="scaled", agent=agent, factor=factor)

    @staticmethod
    def shifted(shift: float, agent: int = 0) -> "DeviationSpec":
        return DeviationSpec(kind="shifted", agent=agent, shift=shift)

    @staticmethod
    def open_loop(path, agent: int = 0) -> "DeviationSpec":
        return DeviationSpec(
            kind="open_loop", agent=agent, path=np.asarray(path, dtype=float)
        )

    @staticmethod
    def zero(agent: int = 0) -> "DeviationSpec":
        return DeviationSpec(kind="zero", agent=agent)

    @property
    def label(self) -> str:
        if self.kind == "scaled":
            return f"scaled:{self.factor:g}"
        if self.kind == "shifted":
            return f"shifted:{self.shift:+g}"
        if self.kind == "zero":
            return "zero"
        return "open_loop"

    def apply(self, u_eq, k: int):
        if self.kind == "scaled":
            return self.factor * u_eq
        if self.kind == "shifted":
            return u_eq + self.shift
        if self.kind == "zero":
            return np.zeros_like(u_eq)
        return np.broadcast_to(self.path[k], np.shape(u_eq)).copy()


# ---------------------------------------------------------------------------
# Trajectories and costs


@dataclass(frozen=True)
class PopulationTrajectory:
    """Paths of one replication, time-major arrays of shape (M+1, N) / (M+1,).

    ``limit_states`` are the per-agent states of the limiting problem driven
    by the same noise and controls; ``limit_mean`` is the limiting state
    realization. Observation, innovation and limiting-filter paths are
    present in noisy-observation mode only.
    """

    mode: InformationMode
    t: np.ndarray
    states: np.ndarray
    filters: np.ndarray
    controls: np.ndarray
    state_avg: np.ndarray
    filter_avg: np.ndarray
    limit_states: np.ndarray | None
    limit_controls: np.ndarray | None
    limit_mean: np.ndarray
    observations: np.ndarray | None = None
    innovations: np.ndarray | None = None
    limit_filters: np.ndarray | None = None
    limit_filter_avg: np.ndarray | None = None

    @property
    def n_agents(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class CostEstimate:
    mean: float
    stderr: float
    reps: int


def _trapezoid_weights(grid: TimeGrid) -> np.ndarray:
    w = np.full(grid.steps + 1, grid.h)
    w[0] = w[-1] = 0.5 * grid.h
    return w


def _single_cost(traj: PopulationTrajectory, model: Model, mode: str, agent: int):
    table = model.table
    Q = table.values("Q")
    R = table.values("R")
    w = _trapezoid_weights(model.grid)
    if mode == "population":
        xi = traj.states[:, agent]
        bench = traj.state_avg
        u = traj.controls[:, agent]
    elif mode == "limiting":
        if traj.limit_states is None:
            raise ValueError("trajectory was simulated without the limiting system")
        xi = traj.limit_states[:, agent]
        bench = traj.limit_mean
        u = traj.limit_controls[:, agent]
    else:
        raise ValueError(f"unknown cost mode: {mode!r}")
    integrand = Q * (xi - bench) ** 2 + R * u**2
    return float(np.dot(w, integrand) + table.G * xi[-1] ** 2)


def estimate_cost(
    trajectories, model: Model, mode: str = "population", agent: int = 0
) -> CostEstimate:
    """Trapezoidal cost of an agent, averaged over replications.

    ``mode`` selects the population cost (benchmark: realized state average)
    or the limiting cost (benchmark: limiting state realization). Accepts a
    single trajectory or a sequence; the standard error is the Monte Carlo
    standard error over replications (0 for a single one).
    """
    if isinstance(trajectories, PopulationTrajectory):
        trajectories = [trajectories]
    vals = np.array([_single_cost(tr, model, mode, agent) for tr in trajectories])
    n = vals.size
    stderr = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CostEstimate(mean=float(vals.mean()), stderr=stderr, reps=n)


# ---------------------------------------------------------------------------
# Core steppers (vectorized over a leading replication-batch axis)


class _PathRecorder:
    """Stores full paths; used by the public single-replication API."""

    def __init__(self, B, N, M, po_mode=False, with_limits=True):
        self.x = np.empty((M + 1, B, N))
        self.xhat = np.empty((M + 1, B, N))
        self.u = np.empty((M + 1, B, N))
        self.xN = np.empty((M + 1, B))
        self.xhatN = np.empty((M + 1, B))
        self.x0 = np.empty((M + 1, B))
        self.xlim = np.empty((M + 1, B, N)) if with_limits else None
        self.ulim = np.empty((M + 1, B, N)) if with_limits else None
        self.po_mode = po_mode
        if po_mode:
            self.y = np.empty((M + 1, B, N))
            self.innov = np.empty((M + 1, B, N))
            self.favg = np.empty((M + 1, B))
            self.xhatlim = np.empty((M + 1, B, N)) if with_limits else None

    def record(self, k, **s):
        self.x[k] = s["x"]
        self.xhat[k] = s["xhat"]
        self.u[k] = s["u"]
        self.xN[k] = s["xN"]
        self.xhatN[k] = s["xhat"].mean(axis=-1)
        self.x0[k] = s["x0"]
        if self.xlim is not None:
            self.xlim[k] = s["xlim"]
            self.ulim[k] = s["ulim"]
        if self.po_mode:
            self.y[k] = s["y"]
            self.innov[k] = s["innov"]
            self.favg[k] = s["favg"]
            if self.xhatlim is not None:
                self.xhatlim[k] = s["xhatlim"]


def _simulate_pf_core(model, strategy, dW, dWi, deviation, recorder, with_limits):
    table = model.table
    grid = model.grid
    h = grid.h
    M = grid.steps
    B, N, _ = dWi.shape
    A = table.values("A")
    Bc = table.values("B")
    mc = table.values("m")
    sig = table.values("sigma")
    sigt = table.values("sigma_tilde")
    alpha = table.alpha

    gF = strategy.gain_filter.values
    gM = strategy.gain_mean.values
    off = strategy.offset.values
    ex0 = strategy.mean_path.values
    # Decoupled filter drift and the limiting-mean SDE coefficients are
    # algebraic combinations of the strategy gains.
    c1 = A + Bc * gF
    c2 = alpha + Bc * gM
    c3 = Bc * off + mc
    a_t = -Bc * (gF + gM)

    x = np.full((B, N), table.x_init)
    xhat = np.full((B, N), table.x_init)
    xlim = np.full((B, N), table.x_init) if with_limits else None
    x0 = np.full(B, table.x_init)

    for k in range(M + 1):
        u = gF[k] * xhat + gM[k] * ex0[k] + off[k]
        if deviation is not None:
            u[:, deviation.agent] = deviation.apply(u[:, deviation.agent], k)
        xN = x.mean(axis=1)
        recorder.record(k, x=x, xhat=xhat, u=u, xN=xN, x0=x0, xlim=xlim, ulim=u)
        if k == M:
            break
        dw = dW[:, k]
        dwi = dWi[:, :, k]
        dw_col = dw[:, None]
        x_next = (
            x
            + (A[k] * x + Bc[k] * u + alpha * xN[:, None] + mc[k]) * h
            + sig[k] * dwi
            + sigt[k] * dw_col
        )
        if with_limits:
            xlim = (
                xlim
                + (A[k] * xlim + Bc[k] * u + alpha * x0[:, None] + mc[k]) * h
                + sig[k] * dwi
                + sigt[k] * dw_col
            )
        x0 = x0 + ((A[k] + alpha) * x0 - a_t[k] * ex0[k] + c3[k]) * h + sigt[k] * dw
        xhat = xhat + (c1[k] * xhat + c2[k] * ex0[k] + c3[k]) * h + sig[k] * dwi
        x = x_next
    return recorder


def _simulate_po_core(
    model, strategy, cons, dW, dWi, dVi, deviation, recorder, with_limits
):
    table = model.table
    grid = model.grid
    h = grid.h
    M = grid.steps
    B, N, _ = dWi.shape
    A = table.values("A")
    Bc = table.values("B")
    mc = table.values("m")
    sig = table.values("sigma")
    sigt = table.values("sigma_tilde")
    Hs = table.values("H")
    Ht = table.values("H_tilde")
    hb = table.values("h")
    alpha = table.alpha

    pfh = cons.filter_variance.values * Hs
    g0 = strategy.gains[:, 0]
    g1 = strategy.gains[:, 1]
    g2 = strategy.gains[:, 2]
    off = strategy.offset.values
    a_self = cons.mean_drift_on_self.values
    a_filt = cons.mean_drift_on_filter.values
    f_n = cons.mean_drift_intercept.values
    c_n = cons.filter_drift_on_mean.values
    d_n = cons.filter_drift_on_self.values
    g_n = cons.filter_drift_intercept.values

    x = np.full((B, N), table.x_init)
    xhat = np.full((B, N), table.x_init)
    x0 = np.full(B, table.x_init)
    favg = np.full(B, table.x_init)
    y = np.zeros((B, N))
    innov = np.zeros((B, N))
    xlim = np.full((B, N), table.x_init) if with_limits else None
    xhatlim = np.full((B, N), table.x_init) if with_limits else None

    for k in range(M + 1):
        x0_col = x0[:, None]
        favg_col = favg[:, None]
        u = g0[k] * xhat + g1[k] * x0_col + g2[k] * favg_col + off[k]
        if deviation is not None:
            u[:, deviation.agent] = deviation.apply(u[:, deviation.agent], k)
        xN = x.mean(axis=1)
        if with_limits:
            ulim = g0[k] * xhatlim + g1[k] * x0_col + g2[k] * favg_col + off[k]
            if deviation is not None:
                ulim[:, deviation.agent] = u[:, deviation.agent]
        else:
            ulim = None
        if k < M:
            dvi = dVi[:, :, k]
            dy = (Hs[k] * x + Ht[k] * xN[:, None] + hb[k]) * h + dvi
            dI = dy - (Hs[k] * xhat + Ht[k] * x0_col + hb[k]) * h
        else:
            dy = dI = None
        recorder.record(
            k,
            x=x,
            xhat=xhat,
            u=u,
            xN=xN,
            x0=x0,
            favg=favg,
            y=y,
            innov=innov,
            dI=dI,
            xlim=xlim,
            ulim=ulim,
            xhatlim=xhatlim,
        )
        if k == M:
            break
        dw = dW[:, k]
        dw_col = dw[:, None]
        dwi = dWi[:, :, k]
        x_next = (
            x
            + (A[k] * x + Bc[k] * u + alpha * xN[:, None] + mc[k]) * h
            + sig[k] * dwi
            + sigt[k] * dw_col
        )
        xhat = (
            xhat
            + (A[k] * xhat + Bc[k] * u + alpha * x0_col + mc[k]) * h
            + pfh[k] * dw_col
            + pfh[k] * dI
        )
        if with_limits:
            dy_lim = (Hs[k] * xlim + Ht[k] * x0_col + hb[k]) * h + dvi
            dI_lim = dy_lim - (Hs[k] * xhatlim + Ht[k] * x0_col + hb[k]) * h
            xlim_next = (
                xlim
                + (A[k] * xlim + Bc[k] * ulim + alpha * x0_col + mc[k]) * h
                + sig[k] * dwi
                + sigt[k] * dw_col
            )
            xhatlim = (
                xhatlim
                + (A[k] * xhatlim + Bc[k] * ulim + alpha * x0_col + mc[k]) * h
                + pfh[k] * dw_col
                + pfh[k] * dI_lim
            )
            xlim = xlim_next
        x0_next = x0 + (a_self[k] * x0 + a_filt[k] * favg + f_n[k]) * h + sigt[k] * dw
        favg = favg + (c_n[k] * x0 + d_n[k] * favg + g_n[k]) * h + pfh[k] * dw
        x0 = x0_next
        y = y + dy
        innov = innov + dI
        x = x_next
    return recorder


# ---------------------------------------------------------------------------
# Public simulation entry points


def simulate_pf_population(
    model: Model,
    strategy: PFStrategy,
    noise: NoiseBundle,
    deviation: DeviationSpec | None = None,
    with_limits: bool = True,
) -> PopulationTrajectory:
    """Simulate one replication of the partial-filtration population.

    Agents apply the decentralized feedback to their simulated filters; the
    limiting state realization is advanced from the same common noise. With
    a deviation, the tagged agent's control is replaced and everyone else
    keeps the equilibrium strategy.
    """
    grid = model.grid
    N = noise.n_agents
    rec = _PathRecorder(1, N, grid.steps, po_mode=False, with_limits=with_limits)
    _simulate_pf_core(
        model,
        strategy,
        noise.dW[None, :],
        noise.dWi[None, :, :],
        deviation,
        rec,
        with_limits,
    )
    return PopulationTrajectory(
        mode=InformationMode.PARTIAL_FILTRATION,
        t=grid.nodes.copy(),
        states=rec.x[:, 0, :],
        filters=rec.xhat[:, 0, :],
        controls=rec.u[:, 0, :],
        state_avg=rec.xN[:, 0],
        filter_avg=rec.xhatN[:, 0],
        limit_states=rec.xlim[:, 0, :] if with_limits else None,
        limit_controls=rec.ulim[:, 0, :] if with_limits else None,
        limit_mean=rec.x0[:, 0],
    )


def simulate_po_population(
    model: Model,
    strategy: POStrategy,
    consistency: POConsistency,
    noise: NoiseBundle,
    deviation: DeviationSpec | None = None,
    with_limits: bool = True,
) -> PopulationTrajectory:
    """Simulate one replication of the noisy-observation population.

    The sensor reads the actual state average; each agent's filter uses the
    limiting-model gain and benchmarks its innovation against the limiting
    pair advanced from the same common noise.
    """
    if noise.dVi is None:
        raise ValueError("noise bundle lacks observation increments")
    grid = model.grid
    N = noise.n_agents
    rec = _PathRecorder(1, N, grid.steps, po_mode=True, with_limits=with_limits)
    _simulate_po_core(
        model,
        strategy,
        consistency,
        noise.dW[None, :],
        noise.dWi[None, :, :],
        noise.dVi[None, :, :],
        deviation,
        rec,
        with_limits,
    )
    return PopulationTrajectory(
        mode=InformationMode.PARTIAL_OBSERVATION,
        t=grid.nodes.copy(),
        states=rec.x[:, 0, :],
        filters=rec.xhat[:, 0, :],
        controls=rec.u[:, 0, :],
        state_avg=rec.xN[:, 0],
        filter_avg=rec.xhatN[:, 0],
        limit_states=rec.xlim[:, 0, :] if with_limits else None,
        limit_controls=rec.ulim[:, 0, :] if with_limits else None,
        limit_mean=rec.x0[:, 0],
        observations=rec.y[:, 0, :],
        innovations=rec.innov[:, 0, :],
        limit_filters=rec.xhatlim[:, 0, :] if with_limits else None,
        limit_filter_avg=rec.favg[:, 0],
    )
