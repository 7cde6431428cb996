"""Exception hierarchy shared across the package."""


class LoglinError(Exception):
    """Base class for all package errors."""


class InvalidClusterError(LoglinError, ValueError):
    pass


class InvalidStructureError(LoglinError, ValueError):
    pass


class CapacityError(LoglinError):
    """Raised when an exact computation would exceed an enumeration limit."""


class DimensionError(LoglinError, ValueError):
    pass


class DomainError(LoglinError, ValueError):
    pass


class FitError(LoglinError):
    """Newton fit or covariance factorization failed for a structure."""

    def __init__(self, message, structure=None):
        super().__init__(message)
        self.structure = structure


class UndefinedEstimateError(LoglinError):
    pass


class ParseError(LoglinError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyDataError(LoglinError, ValueError):
    pass
