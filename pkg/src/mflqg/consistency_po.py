"""Consistency condition for the noisy-observation game.

Solves the forward filter-variance Riccati, then the coupled 3x3 Riccati /
3-vector backward system whose drift matrix is rebuilt from the current
stage value of the matrix path (in-stage substitution, no outer fixed-point
iteration). The derived scalar drift coefficients of the limiting pair
(mean state and limit of filter averages) are recorded node-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiccatiBlowUp
from .model import InformationMode, Model
from .odes import (
    BLOWUP_BOUND_DEFAULT,
    MatrixPath3,
    ScalarPath,
    VectorPath3,
    _rk4_forward,
)

__all__ = [
    "POConsistency",
    "POStrategy",
    "LimitingPairPath",
    "solve_po_consistency",
    "build_po_strategy",
    "solve_limiting_pair",
]


@dataclass(frozen=True)
class POConsistency:
    """Solved consistency paths for the noisy-observation game.

    filter_variance Pf : forward Riccati of the filtering error variance
    value_matrix    pi : symmetric 3x3 Riccati path (terminal block diag(G,0,0))
    value_offset    gamma : 3-vector offset path (deterministic; terminal 0)

    The limiting pair drifts are d(mean) = A~ mean + B~ favg + f and
    d(favg) = C mean + D favg + g, stored as the six scalar paths below.
    """

    model: Model
    filter_variance: ScalarPath
    value_matrix: MatrixPath3
    value_offset: VectorPath3
    mean_drift_on_self: ScalarPath
    mean_drift_on_filter: ScalarPath
    mean_drift_intercept: ScalarPath
    filter_drift_on_mean: ScalarPath
    filter_drift_on_self: ScalarPath
    filter_drift_intercept: ScalarPath


@dataclass(frozen=True)
class POStrategy:
    """Decentralized feedback u = gains . (xhat_i, x0, favg) + offset."""

    gains: np.ndarray  # (M+1, 3)
    offset: ScalarPath

    def control(self, k: int, xhat_i, x0, favg):
        g = self.gains[k]
        return g[0] * xhat_i + g[1] * x0 + g[2] * favg + self.offset.values[k]


@dataclass(frozen=True)
class LimitingPairPath:
    """One realization of the coupled limiting pair, driven by the common noise."""

    grid_nodes: np.ndarray
    mean_state: np.ndarray  # x0 path
    filter_average: np.ndarray  # limit of the state-filter averages


def solve_po_consistency(
    model: Model, bound: float = BLOWUP_BOUND_DEFAULT
) -> POConsistency:
    """Solve the noisy-observation consistency system on the model grid."""
    if model.mode is not InformationMode.PARTIAL_OBSERVATION:
        raise ValueError("model must be in partial-observation mode")
    table = model.table
    grid = model.grid
    alpha = table.alpha
    G = table.G

    fA = table.interpolant("A")
    fH = table.interpolant("H")
    fs = table.interpolant("sigma")
    fst = table.interpolant("sigma_tilde")

    # Filter variance, forward on a half-step-refined grid so the backward
    # solve below reads exact values at its RK4 stage times.
    fine = grid.refined(2)

    def pf_rhs(t, v):
        return 2.0 * fA(t) * v - fH(t) ** 2 * v * v + fs(t) ** 2 + fst(t) ** 2

    pf_fine = _rk4_forward(pf_rhs, 0.0, fine, bound, "filter variance riccati")
    pf_nodes = pf_fine[::2].copy()

    # Coefficient values on the refined grid (exact for piecewise-linear data).
    def refined(name):
        return np.interp(fine.nodes, grid.nodes, table.values(name))

    A_f = refined("A")
    br_f = refined("B") ** 2 / refined("R")
    Q_f = refined("Q")
    m_f = refined("m")
    H2_f = refined("H") ** 2

    def drift_matrix(j, pi):
        """Drift matrix at refined index j, rebuilt from the stage value of pi."""
        br = br_f[j]
        pfh2 = pf_fine[j] * H2_f[j]
        a_self = A_f[j] + alpha - br * pi[0, 1]
        a_filt = -br * (pi[0, 0] + pi[0, 2])
        return np.array(
            [
                [A_f[j], alpha, 0.0],
                [0.0, a_self, a_filt],
                [0.0, a_self - A_f[j] + pfh2, a_filt + A_f[j] - pfh2],
            ]
        )

    def stage_rhs(j, pi, ga):
        Amat = drift_matrix(j, pi)
        br = br_f[j]
        q = Q_f[j]
        Qmat = np.array([[q, -q, 0.0], [-q, q, 0.0], [0.0, 0.0, 0.0]])
        col0 = pi[:, 0]
        row0 = pi[0, :]
        dpi = -(pi @ Amat + Amat.T @ pi - br * np.outer(col0, row0) + Qmat)
        intercept = -br * ga[0] + m_f[j]
        load = np.array([m_f[j], intercept, intercept])
        dga = -(Amat.T @ ga - br * col0 * ga[0] + pi @ load)
        return dpi, dga

    h = grid.h
    M = grid.steps
    pi = np.zeros((3, 3))
    pi[0, 0] = G
    ga = np.zeros(3)
    pi_path = np.empty((M + 1, 3, 3))
    ga_path = np.empty((M + 1, 3))
    pi_path[M] = pi
    ga_path[M] = ga
    for k in range(M, 0, -1):
        j = 2 * k
        k1p, k1g = stage_rhs(j, pi, ga)
        k2p, k2g = stage_rhs(j - 1, pi - 0.5 * h * k1p, ga - 0.5 * h * k1g)
        k3p, k3g = stage_rhs(j - 1, pi - 0.5 * h * k2p, ga - 0.5 * h * k2g)
        k4p, k4g = stage_rhs(j - 2, pi - h * k3p, ga - h * k3g)
        pi = pi - (h / 6.0) * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        ga = ga - (h / 6.0) * (k1g + 2.0 * k2g + 2.0 * k3g + k4g)
        pi = 0.5 * (pi + pi.T)
        worst = max(np.max(np.abs(pi)), np.max(np.abs(ga)))
        if not np.isfinite(worst) or worst > bound:
            raise RiccatiBlowUp(grid.nodes[k - 1], worst, "po riccati system")
        pi_path[k - 1] = pi
        ga_path[k - 1] = ga

    A_n = table.values("A")
    br_n = table.values("B") ** 2 / table.values("R")
    m_n = table.values("m")
    pfh2_n = pf_nodes * table.values("H") ** 2

    a_self = A_n + alpha - br_n * pi_path[:, 0, 1]
    a_filt = -br_n * (pi_path[:, 0, 0] + pi_path[:, 0, 2])
    f_n = -br_n * ga_path[:, 0] + m_n
    c_n = alpha - br_n * pi_path[:, 0, 1] + pfh2_n
    d_n = A_n - br_n * (pi_path[:, 0, 0] + pi_path[:, 0, 2]) - pfh2_n
    g_n = -br_n * ga_path[:, 0] + m_n

    return POConsistency(
        model=model,
        filter_variance=ScalarPath(grid, pf_nodes),
        value_matrix=MatrixPath3(grid, pi_path),
        value_offset=VectorPath3(grid, ga_path),
        mean_drift_on_self=ScalarPath(grid, a_self),
        mean_drift_on_filter=ScalarPath(grid, a_filt),
        mean_drift_intercept=ScalarPath(grid, f_n),
        filter_drift_on_mean=ScalarPath(grid, c_n),
        filter_drift_on_self=ScalarPath(grid, d_n),
        filter_drift_intercept=ScalarPath(grid, g_n),
    )


def build_po_strategy(c: POConsistency) -> POStrategy:
    """Node-wise control gains -R^-1 B (pi_11, pi_12, pi_13) and offset."""
    table = c.model.table
    rb = table.values("B") / table.values("R")
    pi = c.value_matrix.values
    gains = -rb[:, None] * pi[:, 0, :3]
    offset = -rb * c.value_offset.values[:, 0]
    return POStrategy(gains=gains, offset=ScalarPath(c.model.grid, offset))


def _limit_pair_paths(c: POConsistency, dW: np.ndarray):
    """Euler-Maruyama paths of the limiting pair; dW has shape (..., M)."""
    model = c.model
    grid = model.grid
    table = model.table
    h = grid.h
    st = table.values("sigma_tilde")
    pfh = c.filter_variance.values * table.values("H")
    a_self = c.mean_drift_on_self.values
    a_filt = c.mean_drift_on_filter.values
    f_n = c.mean_drift_intercept.values
    c_n = c.filter_drift_on_mean.values
    d_n = c.filter_drift_on_self.values
    g_n = c.filter_drift_intercept.values

    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != grid.steps:
        raise ValueError("noise must provide M increments")
    shape = dW.shape[:-1]
    x0 = np.full(shape, table.x_init)
    fa = np.full(shape, table.x_init)
    x0_path = np.empty(shape + (grid.steps + 1,))
    fa_path = np.empty(shape + (grid.steps + 1,))
    x0_path[..., 0] = x0
    fa_path[..., 0] = fa
    for k in range(grid.steps):
        dw = dW[..., k]
        x0_next = x0 + (a_self[k] * x0 + a_filt[k] * fa + f_n[k]) * h + st[k] * dw
        fa_next = fa + (c_n[k] * x0 + d_n[k] * fa + g_n[k]) * h + pfh[k] * dw
        x0, fa = x0_next, fa_next
        x0_path[..., k + 1] = x0
        fa_path[..., k + 1] = fa
    return x0_path, fa_path


def solve_limiting_pair(c: POConsistency, dW: np.ndarray) -> LimitingPairPath:
    """One realization of the limiting pair driven by a common-noise path."""
    dW = np.asarray(dW, dtype=float)
    if dW.ndim != 1:
        raise ValueError("expected a single increment path of shape (M,)")
    x0_path, fa_path = _limit_pair_paths(c, dW)
    return LimitingPairPath(
        grid_nodes=c.model.grid.nodes.copy(),
        mean_state=x0_path,
        filter_average=fa_path,
    )
