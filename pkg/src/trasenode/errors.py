"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code contract: config errors exit 2,
data errors 3, divergence 4, I/O 5.
"""


class TraseNodeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TraseNodeError):
    """Invalid configuration detected before any work was done."""


class DataError(TraseNodeError):
    """Malformed, inconsistent, or missing input data."""


class DimensionMismatchError(DataError):
    """A vector or matrix has the wrong size along a named axis."""

    def __init__(self, axis: str, expected, got):
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"axis '{axis}': expected {expected}, got {got}")


class DegenerateNormalizationError(DataError):
    """A normalization denominator (signal energy or peak) is zero."""


class DivergenceError(TraseNodeError):
    """A numerical computation blew up."""


class IntegrationDivergedError(DivergenceError):
    """State left the trust region or became non-finite during integration."""

    def __init__(self, time: float, detail: str = ""):
        self.time = time
        msg = f"integration diverged at t={time!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class StiffnessError(DivergenceError):
    """Adaptive step size underflowed; the problem looks stiff."""

    def __init__(self, time: float):
        self.time = time
        super().__init__(f"adaptive step underflow at t={time!r}")
