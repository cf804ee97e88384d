"""Consistency condition and decentralized strategy for the partial-filtration game.

The solver produces the control Riccati path, the aggregate Riccati path that
pins down the mean-field feedback, the affine offset, and the mean path of
the limiting state. The decentralized control is affine in the agent's own
state filter and the limiting mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiccatiBlowUp
from .model import Model
from .odes import BLOWUP_BOUND_DEFAULT, ScalarPath, _rk4_backward

__all__ = [
    "PFConsistency",
    "PFStrategy",
    "solve_pf_consistency",
    "build_pf_strategy",
    "solve_limiting_mean_field_sde",
]


@dataclass(frozen=True)
class PFConsistency:
    """Solved consistency paths for the partial-filtration game.

    control_riccati   P  : gain Riccati of the auxiliary control problem
    aggregate_riccati Pi : Riccati driving the mean-field feedback, Pi = P + Phat
    mean_riccati      Phat: loading on the limiting mean in the adjoint ansatz
    offset            Phi: affine offset path
    adjoint_noise_gain beta = P * sigma
    mean_feedback     a_tilde = B^2 R^-1 Pi   (feedback of the mean on itself)
    mean_intercept    b_tilde = -B^2 R^-1 Phi + m
    mean_path         Ex0: mean of the limiting state, solved forward
    """

    model: Model
    control_riccati: ScalarPath
    aggregate_riccati: ScalarPath
    mean_riccati: ScalarPath
    offset: ScalarPath
    adjoint_noise_gain: ScalarPath
    mean_feedback: ScalarPath
    mean_intercept: ScalarPath
    mean_path: ScalarPath


@dataclass(frozen=True)
class PFStrategy:
    """Decentralized feedback u = gain_filter * xhat_i + gain_mean * Ex0 + offset."""

    gain_filter: ScalarPath
    gain_mean: ScalarPath
    offset: ScalarPath
    mean_path: ScalarPath

    def control(self, k: int, xhat):
        """Control at node k for filter state(s) xhat (scalar or array)."""
        return (
            self.gain_filter.values[k] * xhat
            + self.gain_mean.values[k] * self.mean_path.values[k]
            + self.offset.values[k]
        )


def _refined_coefficient(model: Model, name: str, factor: int = 2) -> np.ndarray:
    """Coefficient values on the factor-refined grid (exact for the interpolant)."""
    vals = model.table.values(name)
    fine = model.grid.refined(factor)
    return np.interp(fine.nodes, model.grid.nodes, vals)


def solve_pf_consistency(
    model: Model, bound: float = BLOWUP_BOUND_DEFAULT
) -> PFConsistency:
    """Solve the partial-filtration consistency system on the model grid.

    The three backward equations (control Riccati, aggregate Riccati, offset)
    are integrated jointly with RK4 on a half-step-refined grid so that the
    forward mean ODE can consume exact stage values; outputs are subsampled
    back to the model grid.
    """
    table = model.table
    grid = model.grid
    alpha = table.alpha
    fA = table.interpolant("A")
    fB = table.interpolant("B")
    fR = table.interpolant("R")
    fQ = table.interpolant("Q")
    fm = table.interpolant("m")

    fine = grid.refined(2)

    def rhs(t, v):
        p, pi, phi = v
        A = fA(t)
        br = fB(t) ** 2 / fR(t)
        dp = -(2.0 * A * p - br * p * p + fQ(t))
        dpi = -((2.0 * A + alpha) * pi - br * pi * pi)
        dphi = -((A - br * pi) * phi + fm(t) * pi)
        return np.array([dp, dpi, dphi])

    try:
        joint = _rk4_backward(
            rhs,
            np.array([table.G, table.G, 0.0]),
            fine,
            bound,
            "pf consistency",
        )
    except RiccatiBlowUp as exc:
        raise RiccatiBlowUp(exc.t, exc.value, "pf riccati system") from None

    p_fine, pi_fine, phi_fine = joint[:, 0], joint[:, 1], joint[:, 2]
    p = p_fine[::2].copy()
    pi = pi_fine[::2].copy()
    phi = phi_fine[::2].copy()

    A_n = table.values("A")
    B_n = table.values("B")
    R_n = table.values("R")
    m_n = table.values("m")
    sig_n = table.values("sigma")
    br_n = B_n**2 / R_n

    phat = pi - p
    beta = p * sig_n
    a_tilde = br_n * pi
    b_tilde = -br_n * phi + m_n

    # Forward mean ODE with RK4; stage values of (Pi, Phi) come from the
    # refined solve so the half-step lookups are exact grid values.
    A_f = _refined_coefficient(model, "A")
    br_f = _refined_coefficient(model, "B") ** 2 / _refined_coefficient(model, "R")
    m_f = _refined_coefficient(model, "m")
    drift = A_f + alpha - br_f * pi_fine
    source = -br_f * phi_fine + m_f

    h = grid.h
    ex0 = np.empty(grid.steps + 1)
    v = table.x_init
    ex0[0] = v
    for k in range(grid.steps):
        j = 2 * k
        k1 = drift[j] * v + source[j]
        k2 = drift[j + 1] * (v + 0.5 * h * k1) + source[j + 1]
        k3 = drift[j + 1] * (v + 0.5 * h * k2) + source[j + 1]
        k4 = drift[j + 2] * (v + h * k3) + source[j + 2]
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ex0[k + 1] = v

    return PFConsistency(
        model=model,
        control_riccati=ScalarPath(grid, p),
        aggregate_riccati=ScalarPath(grid, pi),
        mean_riccati=ScalarPath(grid, phat),
        offset=ScalarPath(grid, phi),
        adjoint_noise_gain=ScalarPath(grid, beta),
        mean_feedback=ScalarPath(grid, a_tilde),
        mean_intercept=ScalarPath(grid, b_tilde),
        mean_path=ScalarPath(grid, ex0),
    )


def build_pf_strategy(c: PFConsistency) -> PFStrategy:
    """Assemble the node-wise feedback gains from a solved consistency."""
    table = c.model.table
    grid = c.model.grid
    rb = table.values("B") / table.values("R")
    return PFStrategy(
        gain_filter=ScalarPath(grid, -rb * c.control_riccati.values),
        gain_mean=ScalarPath(grid, -rb * c.mean_riccati.values),
        offset=ScalarPath(grid, -rb * c.offset.values),
        mean_path=c.mean_path,
    )


def _limit_sde_paths(c: PFConsistency, dW: np.ndarray) -> np.ndarray:
    """Euler-Maruyama paths of the limiting mean-field SDE.

    ``dW`` has shape (..., M); returns paths of shape (..., M+1). The
    mean-field term is the precomputed deterministic mean path.
    """
    model = c.model
    grid = model.grid
    table = model.table
    h = grid.h
    A = table.values("A")
    st = table.values("sigma_tilde")
    a_t = c.mean_feedback.values
    b_t = c.mean_intercept.values
    ex0 = c.mean_path.values
    alpha = table.alpha

    dW = np.asarray(dW, dtype=float)
    if dW.shape[-1] != grid.steps:
        raise ValueError("noise must provide M increments")
    out = np.empty(dW.shape[:-1] + (grid.steps + 1,))
    out[..., 0] = table.x_init
    x = np.full(dW.shape[:-1], table.x_init)
    for k in range(grid.steps):
        x = x + ((A[k] + alpha) * x - a_t[k] * ex0[k] + b_t[k]) * h + st[k] * dW[..., k]
        out[..., k + 1] = x
    return out


def solve_limiting_mean_field_sde(c: PFConsistency, dW: np.ndarray) -> ScalarPath:
    """One Euler-Maruyama realization of the limiting state, driven by dW."""
    dW = np.asarray(dW, dtype=float)
    if dW.ndim != 1:
        raise ValueError("expected a single increment path of shape (M,)")
    return ScalarPath(c.model.grid, _limit_sde_paths(c, dW))
