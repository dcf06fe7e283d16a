"""
EGA - Error hierarchy root and numerics errors.
Every app derives its own base from EGAError.
"""


class EGAError(Exception):
    """Root of every error raised by the pipeline."""


class NumericsError(EGAError):
    """Base class for matrix, gradient and checkpoint errors."""


class ShapeMismatchError(NumericsError, ValueError):
    """Operand shapes do not compose."""


class UnsupportedOperationError(NumericsError, TypeError):
    """Operation outside the differentiable operation set."""


class NumericalError(NumericsError, ArithmeticError):
    """A NaN or Inf was produced by an operation."""


class FrozenParameterError(NumericsError):
    """Update attempted on a frozen parameter."""


class UnknownParameterError(NumericsError, KeyError):
    pass


class DuplicateParameterError(NumericsError, ValueError):
    pass


class CheckpointError(NumericsError):
    """Checkpoint file is malformed or does not match the parameter store."""
