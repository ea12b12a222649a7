# utils/errors.py


class DatasetError(ValueError):
    """A CIFAR-10 batch file is missing, truncated or holds bad records."""

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        where = ""
        if path is not None:
            where = f" [{path}" + (f" @ byte {offset}" if offset is not None else "") + "]"
        super().__init__(message + where)
        self.path = path
        self.offset = offset


class CheckpointError(ValueError):
    """A checkpoint container could not be read or does not fit the graph."""


class NonFiniteGradient(FloatingPointError):
    """An optimizer step was refused because a gradient held NaN/inf."""


class TrainingDiverged(RuntimeError):
    """The training loss went non-finite; parameters were rolled back."""

    def __init__(self, message: str, epoch: int, checkpoint: str | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint


class UsageError(ValueError):
    """Flags or a --config file that cannot be resolved into a run."""
