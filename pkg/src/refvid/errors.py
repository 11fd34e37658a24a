"""Exception taxonomy shared by all modules."""


class RefvidError(Exception):
    """Base class for all package errors."""


class ConfigError(RefvidError):
    """A configuration is internally inconsistent or incompatible with the data."""


class InputError(RefvidError):
    """A runtime input violates an operation's preconditions."""


class NonFiniteError(InputError):
    """A tensor that must be finite contains inf/nan."""


class DataError(RefvidError):
    """A stored record or file is malformed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ParseError(RefvidError):
    """Grounded-markup text failed to parse."""

    def __init__(self, message, offset, kind="malformed"):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
        self.kind = kind


class TrainingDiverged(RefvidError):
    """Training loss became non-finite."""

    def __init__(self, step):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
