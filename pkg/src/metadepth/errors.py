"""Exception hierarchy shared across the package.

Each class carries the process exit code the command line maps it to.
"""


class MetaDepthError(Exception):
    exit_code = 1


class ConfigurationError(MetaDepthError, ValueError):
    exit_code = 2


class ShapeError(MetaDepthError, ValueError):
    exit_code = 2


class StateError(MetaDepthError, RuntimeError):
    exit_code = 1


class DataError(MetaDepthError):
    exit_code = 3


class EmptySupportError(DataError, ValueError):
    """No valid pixels to reduce over."""


class DegenerateInputError(DataError, ValueError):
    pass


class DomainError(DataError, ValueError):
    pass


class ChecksumError(DataError):
    pass


class NumericError(MetaDepthError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, **context):
        self.context = context
        if context:
            where = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({where})"
        super().__init__(message)
