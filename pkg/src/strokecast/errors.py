"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ParameterError(ValueError):
    """An argument value is outside its documented domain."""


class ConfigError(ValueError):
    """A configuration object violates one of its invariants."""


class DegenerateInputError(ValueError):
    """Input is structurally valid but too degenerate to process."""


class UndefinedMetricError(ValueError):
    """The requested metric is undefined for the given labels."""


class FileFormatError(ValueError):
    """A binary or text artifact on disk does not match its declared format."""


class CorruptCheckpointError(FileFormatError):
    """Checkpoint file failed validation; carries the failing byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TrainingDivergedError(RuntimeError):
    """Training was aborted because gradients became non-finite."""
