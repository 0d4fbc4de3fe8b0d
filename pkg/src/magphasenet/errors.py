"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class UndefinedMetricError(ValueError):
    """A metric has no defined value for the given signals (e.g. silent reference)."""


class ConfigError(ValueError):
    """A configuration file, key, or value is invalid."""


class CheckpointError(RuntimeError):
    """A checkpoint file is missing, corrupt, or from an unknown format."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str, batch_id: str | None = None):
        super().__init__(message)
        self.batch_id = batch_id
