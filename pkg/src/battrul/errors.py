"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data does not satisfy the battery-cycle CSV contract."""


class EmptyInputError(DataError):
    pass


class SchemaError(DataError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DuplicateRecordError(DataError):
    pass


class UnknownBatteryError(DataError, KeyError):
    def __init__(self, missing, available):
        self.missing = sorted(missing)
        self.available = sorted(available)
        super().__init__(f"unknown battery id(s) {self.missing}; available: {self.available}")

    def __str__(self):
        return self.args[0]


class ModelFormatError(ValueError):
    """Model file is malformed; ``path`` names the offending field."""

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class ModelVersionError(ModelFormatError):
    pass


class CacheError(RuntimeError):
    """A forward cache was missing, or stale relative to the network weights."""


class DivergedError(RuntimeError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch}, batch {batch} (loss={loss})")
