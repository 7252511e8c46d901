"""Exception hierarchy. The CLI maps the three families to exit codes."""


class ForensicsError(Exception):
    exit_code = 1


class ConfigError(ForensicsError, ValueError):
    exit_code = 2


class DataError(ForensicsError, ValueError):
    exit_code = 3


class ModelError(ForensicsError, RuntimeError):
    exit_code = 4


class LoadError(DataError):
    def __init__(self, message, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path


class InconsistencyError(DataError):
    pass


class OrderingError(DataError):
    pass


class GeometryError(DataError):
    pass


class AlignmentError(DataError):
    pass


class DuplicationError(DataError):
    pass


class DomainError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class ShapeError(ModelError, ValueError):
    pass


class CorruptionError(ModelError):
    pass


class TrainingError(ModelError):
    def __init__(self, message, step=None):
        super().__init__(f"{message} (step {step})" if step is not None else message)
        self.step = step
