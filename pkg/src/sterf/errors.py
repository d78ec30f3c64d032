"""Exception hierarchy shared by every sterf module."""


class SterfError(Exception):
    """Base class for all errors raised by sterf."""


class ShapeError(SterfError, ValueError):
    pass


class DimensionError(ShapeError):
    pass


class ParameterError(SterfError, ValueError):
    pass


class GraphReferenceError(SterfError, LookupError):
    pass


class NumericError(SterfError, ArithmeticError):
    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message)
        self.node_id = node_id


class ModeError(SterfError, ValueError):
    pass


class SizeError(SterfError, ValueError):
    pass


class DomainError(SterfError, ValueError):
    pass


class ConfigError(SterfError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
