from numerics.exceptions import EGAError


class RecFormerError(EGAError):
    """Base class for encoder errors."""


class InvalidConfigError(RecFormerError, ValueError):
    """Encoder dimensions violate a structural bound."""
