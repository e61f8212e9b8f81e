"""Exception types shared across the package."""


class AutoTCLError(Exception):
    """Base class for all package errors."""


class FormatError(AutoTCLError):
    """A file could not be parsed under the declared format.

    Carries enough location information (line/column) to point at the
    offending cell.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(AutoTCLError):
    """Inputs violate a documented precondition or invariant."""


class ConfigError(AutoTCLError):
    """An experiment config file is malformed or carries unknown/ill-typed keys."""

    def __init__(self, message: str, key: str | None = None):
        if key is not None:
            message = f"{message}: {key}"
        super().__init__(message)
        self.key = key


class NumericalError(AutoTCLError):
    """A computation produced non-finite values.

    ``context`` names the offending layer or step; ``checkpoint_path`` points at
    the last good checkpoint when training aborts.
    """

    def __init__(self, message: str, context: str | None = None, checkpoint_path=None):
        if context is not None:
            message = f"{message} [{context}]"
        super().__init__(message)
        self.context = context
        self.checkpoint_path = checkpoint_path


class SchemaError(AutoTCLError):
    """A serialized artifact does not match the expected schema version."""

    def __init__(self, message: str, expected=None, found=None):
        if expected is not None or found is not None:
            message = f"{message} (expected {expected!r}, found {found!r})"
        super().__init__(message)
        self.expected = expected
        self.found = found
