"""Exception types shared across the package."""


class DacAuthError(Exception):
    """Base class for all package-specific errors."""


class InsufficientSamplesError(DacAuthError):
    """A trace or window set is too short for the requested operation."""

    def __init__(self, required: int, got: int, what: str = "samples"):
        self.required = required
        self.got = got
        super().__init__(f"need at least {required} {what}, got {got}")


class TrainingDivergedError(DacAuthError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch}")


class CorruptKeyError(DacAuthError):
    """Weight file is truncated, has a bad magic, or fails its checksum."""


class IncompatibleKeyError(DacAuthError):
    """Weight file is valid but describes a different architecture."""


class MessageIntegrityError(DacAuthError):
    """Authentication message is malformed or fails its checksum."""
