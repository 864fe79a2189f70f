"""Exception hierarchy.

The three top-level families map onto CLI exit codes: data problems exit 1,
configuration problems exit 2, numeric failures exit 3.
"""


class SpartaError(Exception):
    exit_code = 1


class DataError(SpartaError):
    """Input data is malformed, missing or inconsistent."""

    exit_code = 1


class ConfigError(SpartaError, ValueError):
    """A configuration value is invalid or outside its allowed range."""

    exit_code = 2


class NumericError(SpartaError, ArithmeticError):
    """Non-finite values or singular systems during computation."""

    exit_code = 3


class ManifestError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateIdError(ManifestError):
    pass


class UnknownLabelError(ManifestError):
    pass


class FormatError(DataError):
    """Binary or audio container does not match the expected layout."""


class InfeasibleError(DataError):
    pass


class ValidationError(DataError):
    pass


class TooShortError(DataError):
    pass


class EmptyInputError(DataError, ValueError):
    pass


class DimensionError(DataError, ValueError):
    pass


class MissingEntryError(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TaskDataError(DataError):
    pass


class StaleTapeError(SpartaError, RuntimeError):
    pass


class DivergenceError(NumericError):
    def __init__(self, message, epoch=None, batch=None):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
