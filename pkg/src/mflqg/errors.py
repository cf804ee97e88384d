"""Exception taxonomy shared across the package."""


class MFLQGError(Exception):
    """Base class for all package errors."""


class MissingCoefficient(MFLQGError):
    """A coefficient required by the selected information mode is absent."""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing coefficient: {name}")


class AssumptionViolation(MFLQGError):
    """A standing assumption on the model data fails.

    ``condition`` names the violated requirement (e.g. "R>0"); ``node``
    is the grid index at which it fails, or None for scalar conditions.
    """

    def __init__(self, condition: str, node: int | None = None):
        self.condition = condition
        self.node = node
        at = "" if node is None else f" at node {node}"
        super().__init__(f"assumption violated: {condition}{at}")


class OutOfDomain(MFLQGError):
    """Evaluation time outside [0, T]."""

    def __init__(self, t: float, horizon: float):
        self.t = t
        self.horizon = horizon
        super().__init__(f"t={t!r} outside [0, {horizon!r}]")


class RiccatiBlowUp(MFLQGError):
    """A Riccati solution escaped the configured bound (finite-time blow-up)."""

    def __init__(self, t: float, value: float, label: str = ""):
        self.t = t
        self.value = value
        self.label = label
        what = label or "riccati"
        super().__init__(f"{what} blow-up at t={t:.6g} (|value|={value:.3g})")


class InsufficientReplications(MFLQGError):
    """Monte Carlo standard errors too large relative to the estimates."""

    def __init__(self, quantity: str, estimate: float, stderr: float):
        self.quantity = quantity
        self.estimate = estimate
        self.stderr = stderr
        super().__init__(
            f"{quantity}: stderr {stderr:.3g} exceeds 30% of estimate {estimate:.3g}"
        )


class DegenerateData(MFLQGError):
    """Slope fit input is unusable (non-positive estimates or a single N)."""
