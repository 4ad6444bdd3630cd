"""Exception types shared across the toolkit."""


class PIDError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(PIDError, ValueError):
    """An argument violates an operation's precondition."""


class ValidationError(PIDError, ValueError):
    """Data failed a structural check (simplex, class count, ...)."""


class RecordParseError(PIDError, ValueError):
    """A line of a structured-text file could not be parsed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class NumericError(PIDError, ArithmeticError):
    """Non-finite values reached a numeric routine."""


class ConfigError(PIDError, ValueError):
    """A run configuration failed schema validation."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class StageError(PIDError, RuntimeError):
    """A pipeline stage failed; ``stage`` names where."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
