"""Exception types shared across the package."""


class DataError(Exception):
    """A dataset file / annotation / checkpoint is missing or ill-formed."""


class NumericError(RuntimeError):
    """Training produced a non-finite loss; records where it happened."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
