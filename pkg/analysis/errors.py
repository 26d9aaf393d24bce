"""
Exception hierarchy shared by the simulator.

Every error raised on purpose by the simulator derives from FlareError, so the
command-line entry point can tell configuration problems (exit status 2) from
runtime failures (exit status 1).
"""


class FlareError(Exception):
    """Base class for all simulator errors."""


class ConfigError(FlareError):
    """Raised when an experiment document cannot be turned into a valid configuration."""


class MissingField(ConfigError):
    """A configuration field is required but was given no value."""

    def __init__(self, field: str):
        self.field = field
        super().__init__(f"Missing value for configuration field '{field}'")


class InvariantViolation(ConfigError):
    """A configuration value violates one of its documented bounds."""

    def __init__(self, field: str, bound: str, value=None):
        self.field = field
        self.bound = bound
        self.value = value
        super().__init__(f"Invalid value {value!r} for '{field}': requires {bound}")


class DimensionMismatch(FlareError, ValueError):
    """Two model vectors that must share a dimension do not."""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"Dimension mismatch: expected {expected}, got {actual}")


class NonFiniteVector(FlareError, ValueError):
    """A model vector contains NaN or infinite entries."""


class EmptyCohort(FlareError):
    """A cohort-level reduction was asked to run on no updates."""


class CohortTooSmall(FlareError):
    """A robust aggregator needs more updates than the cohort provides."""


class CohortTooLarge(FlareError):
    """More clients were requested than the federation contains."""


class InvalidParameter(FlareError, ValueError):
    """A function argument is outside its admissible range."""


class UnknownRole(FlareError):
    """A client role has no attack behaviour registered for it."""


class LengthMismatch(FlareError, ValueError):
    """Two per-round series that must be aligned have different lengths."""


class ReputationBoundViolation(FlareError):
    """A reputation or one of its components left the unit interval."""


class OutputExistsError(FlareError):
    """The run directory already holds results and overwriting was not forced."""
