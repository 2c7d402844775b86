"""Exception types shared across the package."""


class AmpNetError(Exception):
    """Base class for all package errors."""


class DimensionError(AmpNetError, ValueError):
    """Operand shapes do not agree."""


class ParameterError(AmpNetError, ValueError):
    """A scalar or configuration value is outside its allowed range."""


class ContractError(AmpNetError, RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class SingularityError(AmpNetError, ArithmeticError):
    """A linear system is numerically singular."""


class DivergenceError(AmpNetError, ArithmeticError):
    """An iterative solver blew up. ``trace`` holds the residual history."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class NumericError(AmpNetError, ArithmeticError):
    """A non-finite value appeared in a forward pass or loss."""


class DataError(AmpNetError):
    """Input data is missing, empty or malformed."""


class CheckpointError(AmpNetError):
    """A checkpoint file is corrupt, truncated or incompatible."""
