from numerics.exceptions import EGAError


class FeatureStoreError(EGAError):
    """Base class for feature-store errors."""


class UnknownFeatureError(FeatureStoreError, KeyError):
    """Feature-value id outside its table vocabulary."""


class UnknownAdError(FeatureStoreError, KeyError):
    """Ad id not present in the local ad store."""


class UnknownUserError(FeatureStoreError, KeyError):
    """User id has no record in the remote user store."""


class InvalidRecordError(FeatureStoreError, ValueError):
    pass
