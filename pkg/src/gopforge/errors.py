"""Exception hierarchy shared by every gopforge module."""


class GopError(Exception):
    """Base class for all library errors."""


class ValidationError(GopError, ValueError):
    """Bad argument value or violated precondition."""


class ShapeError(ValidationError):
    """Operand dimensions do not line up."""


class NumericError(GopError, ArithmeticError):
    """Non-finite values or a numerical routine that failed to converge."""


class TrainingError(GopError):
    """A training run diverged (loss became NaN or Inf)."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ProgressionError(GopError):
    """A progressive construction step could not complete."""


class ContractError(GopError):
    """Internal contract violated, e.g. a stale forward cache."""
