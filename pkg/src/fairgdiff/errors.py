"""Exception hierarchy. ``exit_code`` is what the CLI returns for each kind."""


class FairGDiffError(Exception):
    exit_code = 1


class ConfigError(FairGDiffError):
    exit_code = 2


class DataError(FairGDiffError):
    exit_code = 3


class SchemaError(DataError):
    pass


class IngestionError(DataError):
    pass


class ValidationError(DataError):
    pass


class DivergenceError(FairGDiffError):
    """Raised when a loss becomes non-finite during training."""

    exit_code = 4

    def __init__(self, message, epoch=None, trace=None):
        super().__init__(message)
        self.epoch = epoch
        self.trace = list(trace) if trace is not None else []


class PreconditionError(FairGDiffError):
    exit_code = 5


class SizeError(PreconditionError):
    pass


class UntrainedModelError(PreconditionError):
    pass


class EmptyGroupError(PreconditionError):
    pass


class UndefinedRatioError(PreconditionError):
    pass


class InsufficientEdgesError(PreconditionError):
    pass
