"""Exception types shared across the package."""


class CopaError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(CopaError):
    """Invalid concept schema; ``path`` points at the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ManifestError(CopaError):
    """Invalid dataset manifest; ``row`` is the 1-based data row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class CheckpointError(CopaError):
    """Unreadable or incompatible checkpoint archive."""


class TrainingDiverged(CopaError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, step {step}; "
            "lower the learning rate or inspect the input data"
        )
