"""Exception hierarchy.

Validation problems derive from :class:`ValueError` and numerical failures from
:class:`ArithmeticError` so that callers (notably the CLI) can map them to
distinct exit codes.
"""


class StateCompressError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(StateCompressError, ValueError):
    """Input failed a structural or schema check."""


class DimensionError(ValidationError):
    """Array shapes are incompatible."""


class InsufficientDataError(ValidationError):
    """Not enough observations to form an estimate."""


class StructuralError(ValidationError):
    """A matrix lacks a required structural property (e.g. irreducibility)."""


class ReversibilityError(StructuralError):
    """Detailed balance fails; ``max_violation`` holds the worst offender."""

    def __init__(self, message, max_violation):
        super().__init__(message)
        self.max_violation = max_violation


class SchemaError(ValidationError):
    """CSV input is missing required columns."""


class ConfigError(ValidationError):
    """Inconsistent configuration (overlapping segments, bad grid, ...)."""


class EmptyStateSpaceError(ValidationError):
    """Filtering removed every state."""


class UndefinedRateError(ValidationError):
    """A misclassification rate was requested for a partition with an empty block."""


class NumericalError(StateCompressError, ArithmeticError):
    """An iterative or numerical procedure did not deliver a usable result."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MixingCapError(NumericalError):
    """The chain did not mix within the configured step cap."""

    def __init__(self, message, last_distance):
        super().__init__(message, residual=last_distance)
        self.last_distance = last_distance


class DegenerateEstimateError(NumericalError):
    """The positive part of a truncated estimate vanished."""
