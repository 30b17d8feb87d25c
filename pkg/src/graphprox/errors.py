"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class GraphProxError(Exception):
    category = "error"
    exit_code = 1


class ValidationError(GraphProxError, ValueError):
    category = "validation"


class ParseError(ValidationError):
    category = "parse"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValidationError):
    category = "config"


class RefusalError(ValidationError):
    """Raised when an exact solver is asked to handle inputs beyond its limit."""

    category = "refusal"


class ResourceError(GraphProxError, RuntimeError):
    category = "resource"
    exit_code = 2


class NumericError(GraphProxError, ArithmeticError):
    category = "numeric"
    exit_code = 2
