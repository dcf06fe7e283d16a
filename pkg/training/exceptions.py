from numerics.exceptions import EGAError


class TrainingError(EGAError):
    """Base class for training-pipeline errors."""


class NegativeSamplingError(TrainingError, ValueError):
    """More negatives requested than ads with nonzero sampling mass."""


class InvalidSampleError(TrainingError, ValueError):
    """Request sample violates its size or label contract."""


class UnknownPhaseError(TrainingError, KeyError):
    pass


class IndividualRationalityError(TrainingError, ArithmeticError):
    """A payment exceeded the bid it was charged against."""
