"""Exception types raised across the package."""


class GraphActiveError(Exception):
    """Base class for all package errors."""


class LoadError(GraphActiveError):
    """A dataset bundle file is missing or unreadable."""

    def __init__(self, path, reason="missing file"):
        self.path = str(path)
        super().__init__(f"{reason}: {self.path}")


class ParseError(GraphActiveError):
    def __init__(self, path, line_no: int, reason: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{self.path}:{line_no}: {reason}")


class ConsistencyError(GraphActiveError):
    """Bundle files disagree with each other (e.g. node counts)."""


class InfeasibleSplitError(GraphActiveError):
    pass


class UndefinedStatisticError(GraphActiveError):
    pass


class DimensionError(GraphActiveError, ValueError):
    pass


class TrainingError(GraphActiveError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class ConvergenceError(GraphActiveError):
    pass


class ConfigError(GraphActiveError):
    pass
