from numerics.exceptions import EGAError


class HarnessError(EGAError):
    """Base class for world, run-config and driver errors."""


class WorldConfigError(HarnessError, ValueError):
    """World parameters violate a structural bound."""


class MissingCheckpointError(HarnessError, FileNotFoundError):
    """A phase ran before the phase it depends on."""

    def __init__(self, phase: str, path):
        self.phase = phase
        self.path = path
        super().__init__(f"missing '{phase}' checkpoint at {path}; run the {phase} phase first")


class MissingDataError(HarnessError, FileNotFoundError):
    pass
