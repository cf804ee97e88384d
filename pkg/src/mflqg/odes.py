"""Fixed-step classical RK4 integrators for the deterministic equation systems.

All solvers step exactly on the model grid (deterministic, reproducible) and
guard against finite-time escape of Riccati solutions. Coefficients may be
floats or callables of time; callables are evaluated at the RK4 stage times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RiccatiBlowUp
from .model import TimeGrid

BLOWUP_BOUND_DEFAULT = 1e12


@dataclass(frozen=True)
class ScalarPath:
    """A real-valued path sampled on the grid nodes (length M+1)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.steps + 1,):
            raise ValueError("path length must be M+1")

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.grid.nodes, self.values))


@dataclass(frozen=True)
class MatrixPath3:
    """A 3x3-matrix-valued path on the grid nodes, shape (M+1, 3, 3)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.steps + 1, 3, 3):
            raise ValueError("matrix path must have shape (M+1, 3, 3)")


@dataclass(frozen=True)
class VectorPath3:
    """A 3-vector-valued path on the grid nodes, shape (M+1, 3)."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.steps + 1, 3):
            raise ValueError("vector path must have shape (M+1, 3)")


def _as_fn(coeff):
    if callable(coeff):
        return coeff
    value = float(coeff)
    return lambda t: value


def _check(state, t, bound, label):
    m = float(np.max(np.abs(state)))
    if not np.isfinite(m) or m > bound:
        raise RiccatiBlowUp(t, m, label)


def _rk4_backward(f, terminal, grid, bound, label, postprocess=None):
    """Integrate dv/dt = f(t, v) from t=T down to 0; returns (M+1, *shape)."""
    h = grid.h
    nodes = grid.nodes
    out = np.empty((grid.steps + 1,) + np.shape(terminal))
    v = np.array(terminal, dtype=float)
    out[-1] = v
    for k in range(grid.steps, 0, -1):
        t = nodes[k]
        k1 = f(t, v)
        k2 = f(t - 0.5 * h, v - 0.5 * h * k1)
        k3 = f(t - 0.5 * h, v - 0.5 * h * k2)
        k4 = f(t - h, v - h * k3)
        v = v - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if postprocess is not None:
            v = postprocess(v)
        _check(v, nodes[k - 1], bound, label)
        out[k - 1] = v
    return out


def _rk4_forward(f, initial, grid, bound, label):
    """Integrate dv/dt = f(t, v) from t=0 up to T; returns (M+1, *shape)."""
    h = grid.h
    nodes = grid.nodes
    out = np.empty((grid.steps + 1,) + np.shape(initial))
    v = np.array(initial, dtype=float)
    out[0] = v
    for k in range(grid.steps):
        t = nodes[k]
        k1 = f(t, v)
        k2 = f(t + 0.5 * h, v + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, v + 0.5 * h * k2)
        k4 = f(t + h, v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(v, nodes[k + 1], bound, label)
        out[k + 1] = v
    return out


def solve_terminal_scalar_riccati(
    a,
    b,
    c,
    terminal: float,
    grid: TimeGrid,
    bound: float = BLOWUP_BOUND_DEFAULT,
    label: str = "terminal riccati",
) -> ScalarPath:
    """Solve v' + a(t) v + b(t) v^2 + c(t) = 0 backward from v(T) = terminal."""
    fa, fb, fc = _as_fn(a), _as_fn(b), _as_fn(c)

    def f(t, v):
        return -(fa(t) * v + fb(t) * v * v + fc(t))

    values = _rk4_backward(f, float(terminal), grid, bound, label)
    return ScalarPath(grid, values)


def solve_terminal_linear(
    a,
    c,
    terminal: float,
    grid: TimeGrid,
    bound: float = BLOWUP_BOUND_DEFAULT,
    label: str = "terminal linear",
) -> ScalarPath:
    """Solve v' + a(t) v + c(t) = 0 backward from v(T) = terminal."""
    return solve_terminal_scalar_riccati(a, 0.0, c, terminal, grid, bound, label)


def solve_forward_scalar_riccati(
    a,
    b,
    c,
    initial: float,
    grid: TimeGrid,
    bound: float = BLOWUP_BOUND_DEFAULT,
    label: str = "forward riccati",
) -> ScalarPath:
    """Solve v' = a(t) v + b(t) v^2 + c(t) forward from v(0) = initial."""
    fa, fb, fc = _as_fn(a), _as_fn(b), _as_fn(c)

    def f(t, v):
        return fa(t) * v + fb(t) * v * v + fc(t)

    values = _rk4_forward(f, float(initial), grid, bound, label)
    return ScalarPath(grid, values)


def solve_coupled_matrix_system(
    rhs,
    terminal_pi: np.ndarray,
    terminal_gamma: np.ndarray,
    grid: TimeGrid,
    bound: float = BLOWUP_BOUND_DEFAULT,
    label: str = "coupled matrix system",
) -> tuple[MatrixPath3, VectorPath3]:
    """Backward RK4 for a coupled 3x3-matrix/3-vector system.

    ``rhs(t, pi, gamma)`` returns the time derivatives (dpi, dgamma); the
    drift may depend on the current stage value of pi (fully coupled
    stages). The matrix part is re-symmetrized after every step.
    """
    pi_T = np.array(terminal_pi, dtype=float).reshape(3, 3)
    ga_T = np.array(terminal_gamma, dtype=float).reshape(3)

    def f(t, state):
        pi = state[:9].reshape(3, 3)
        ga = state[9:]
        dpi, dga = rhs(t, pi, ga)
        return np.concatenate([np.ravel(dpi), np.ravel(dga)])

    def postprocess(state):
        pi = state[:9].reshape(3, 3)
        pi = 0.5 * (pi + pi.T)
        return np.concatenate([np.ravel(pi), state[9:]])

    terminal = np.concatenate([np.ravel(pi_T), ga_T])
    flat = _rk4_backward(f, terminal, grid, bound, label, postprocess=postprocess)
    pi_path = flat[:, :9].reshape(-1, 3, 3)
    ga_path = flat[:, 9:]
    return MatrixPath3(grid, pi_path), VectorPath3(grid, ga_path)
