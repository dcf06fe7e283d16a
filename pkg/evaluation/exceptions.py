from numerics.exceptions import EGAError


class EvaluationError(EGAError):
    """Base class for metric and report errors."""


class MetricInputError(EvaluationError, ValueError):
    """Scores, labels or slates are malformed for the requested metric."""


class FlopsConfigError(EvaluationError, ValueError):
    pass
