"""Time grid, coefficient tables and validation of the standing assumptions.

Coefficients are supplied either as scalars (constant in time) or as arrays
of samples spread uniformly over [0, T]; both are resampled onto the model
grid by piecewise-linear interpolation, which keeps every ODE right-hand
side continuous for the integrators.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, MissingCoefficient, OutOfDomain

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

R_FLOOR_DEFAULT = 1e-8

# Per-node coefficients of the state dynamics and cost.
DYNAMIC_NAMES = ("A", "B", "m", "sigma", "sigma_tilde", "Q", "R")
# Per-node sensor coefficients, required only with noisy observations.
OBSERVATION_NAMES = ("H", "H_tilde", "h")


class InformationMode(enum.Enum):
    PARTIAL_FILTRATION = "pf"
    PARTIAL_OBSERVATION = "po"


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k*T/M on [0, T]."""

    horizon: float
    steps: int
    nodes: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0.0):
            raise AssumptionViolation("T>0")
        if self.steps < 2:
            raise AssumptionViolation("M>=2")
        object.__setattr__(
            self, "nodes", np.linspace(0.0, self.horizon, self.steps + 1)
        )

    @property
    def h(self) -> float:
        return self.horizon / self.steps

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


@dataclass(frozen=True)
class CoefficientTable:
    """Model coefficients sampled at the grid nodes.

    ``samples`` maps a coefficient name to an array of length M+1; the
    scalars are the coupling strength ``alpha``, terminal weight ``G`` and
    the common deterministic initial state ``x_init``.
    """

    grid: TimeGrid
    samples: dict[str, np.ndarray]
    alpha: float
    G: float
    x_init: float
    r_floor: float = R_FLOOR_DEFAULT

    def __post_init__(self):
        for name, vals in self.samples.items():
            if vals.shape != (self.grid.steps + 1,):
                raise ValueError(f"{name}: expected {self.grid.steps + 1} samples")
        self.validate()

    def validate(self) -> None:
        """Check the standing boundedness/positivity assumptions node-wise."""
        for name, vals in self.samples.items():
            bad = np.flatnonzero(~np.isfinite(vals))
            if bad.size:
                raise AssumptionViolation(f"{name} finite", int(bad[0]))
        q = self.samples["Q"]
        bad = np.flatnonzero(q < 0.0)
        if bad.size:
            raise AssumptionViolation("Q>=0", int(bad[0]))
        r = self.samples["R"]
        bad = np.flatnonzero(r < self.r_floor)
        if bad.size:
            raise AssumptionViolation("R>0", int(bad[0]))
        if not math.isfinite(self.alpha):
            raise AssumptionViolation("alpha finite")
        if not (math.isfinite(self.G) and self.G >= 0.0):
            raise AssumptionViolation("G>=0")
        if not math.isfinite(self.x_init):
            raise AssumptionViolation("x finite")

    @property
    def has_observation(self) -> bool:
        return all(n in self.samples for n in OBSERVATION_NAMES)

    def values(self, name: str) -> np.ndarray:
        try:
            return self.samples[name]
        except KeyError:
            raise MissingCoefficient(name) from None

    def interpolant(self, name: str):
        """Return the piecewise-linear interpolant of a coefficient."""
        vals = self.values(name)
        grid = self.grid

        def f(t: float) -> float:
            return _interp_node_values(grid, vals, t)

        return f


def _interp_node_values(grid: TimeGrid, vals: np.ndarray, t: float) -> float:
    T = grid.horizon
    eps = 1e-9 * T
    if t < -eps or t > T + eps:
        raise OutOfDomain(t, T)
    s = min(max(t, 0.0), T) / grid.h
    k = min(int(s), grid.steps - 1)
    w = s - k
    return float((1.0 - w) * vals[k] + w * vals[k + 1])


def eval_coefficient(table: CoefficientTable, name: str, t: float) -> float:
    """Evaluate a coefficient at time t by linear interpolation (exact at nodes)."""
    return _interp_node_values(table.grid, table.values(name), t)


@dataclass(frozen=True)
class PopulationConfig:
    """Agent count, replication count, seed and information mode."""

    N: int
    reps: int
    seed: int
    mode: InformationMode

    def __post_init__(self):
        if self.N < 1:
            raise AssumptionViolation("N>=1")
        if self.reps < 1:
            raise AssumptionViolation("reps>=1")


@dataclass(frozen=True)
class Model:
    grid: TimeGrid
    table: CoefficientTable
    population: PopulationConfig

    @property
    def mode(self) -> InformationMode:
        return self.population.mode


def _resample(raw, grid: TimeGrid, name: str) -> np.ndarray:
    """Spread provided samples uniformly over [0, T] and evaluate at nodes."""
    if np.isscalar(raw):
        return np.full(grid.steps + 1, float(raw))
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise AssumptionViolation(f"{name} samples well-formed")
    if arr.size == 1:
        return np.full(grid.steps + 1, float(arr[0]))
    src_t = np.linspace(0.0, grid.horizon, arr.size)
    return np.interp(grid.nodes, src_t, arr)


def build_model(config, r_floor: float = R_FLOOR_DEFAULT) -> Model:
    """Build and validate a model from a config mapping or a TOML file path.

    The config has sections ``grid`` (T, M), ``coefficients`` (scalar or
    array samples) and ``population`` (N, reps, seed); the top-level key
    ``mode`` selects "pf" or "po". Raises MissingCoefficient when a field
    required by the mode is absent and AssumptionViolation when the data
    fail a standing assumption.
    """
    if not isinstance(config, dict):
        with open(config, "rb") as fh:
            config = tomllib.load(fh)

    mode = InformationMode(config.get("mode", "pf"))
    grid_cfg = config.get("grid", {})
    try:
        grid = TimeGrid(float(grid_cfg["T"]), int(grid_cfg["M"]))
    except KeyError as exc:
        raise MissingCoefficient(f"grid.{exc.args[0]}") from None

    coeffs = config.get("coefficients", {})
    samples: dict[str, np.ndarray] = {}
    required = DYNAMIC_NAMES + (
        OBSERVATION_NAMES if mode is InformationMode.PARTIAL_OBSERVATION else ()
    )
    for name in required:
        if name not in coeffs:
            raise MissingCoefficient(name)
        samples[name] = _resample(coeffs[name], grid, name)
    # Sensor coefficients present in a PF config are carried along unused.
    if mode is InformationMode.PARTIAL_FILTRATION:
        for name in OBSERVATION_NAMES:
            if name in coeffs:
                samples[name] = _resample(coeffs[name], grid, name)

    for scalar in ("alpha", "G", "x_init"):
        if scalar not in coeffs:
            raise MissingCoefficient(scalar)

    table = CoefficientTable(
        grid=grid,
        samples=samples,
        alpha=float(coeffs["alpha"]),
        G=float(coeffs["G"]),
        x_init=float(coeffs["x_init"]),
        r_floor=r_floor,
    )

    pop_cfg = config.get("population", {})
    population = PopulationConfig(
        N=int(pop_cfg.get("N", 2)),
        reps=int(pop_cfg.get("reps", 1)),
        seed=int(pop_cfg.get("seed", 0)),
        mode=mode,
    )
    return Model(grid=grid, table=table, population=population)
