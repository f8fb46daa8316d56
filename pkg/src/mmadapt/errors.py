"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration; message carries the field path."""


class CheckpointError(RuntimeError):
    """Archive is unreadable, incomplete, or incompatible with the target model."""


class DataError(RuntimeError):
    """Dataset layout, sample content, or manifest violates its contract."""


class MetricError(RuntimeError):
    """Requested metric is undefined for the accumulated state."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-recoverable condition (e.g. non-finite loss)."""

    def __init__(self, message: str, snapshot_path: str | None = None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
