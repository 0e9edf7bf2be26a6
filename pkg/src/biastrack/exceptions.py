"""Exception hierarchy for the biastrack toolkit.

The CLI maps these onto exit codes: config problems exit 2, data problems
exit 3, anything else exits 4.
"""


class BiastrackError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(BiastrackError, ValueError):
    """An argument or input violates a documented precondition."""


class DegenerateInputError(ValidationError):
    """Statistical input with no usable signal (e.g. zero variance)."""


class ParseError(BiastrackError):
    """Malformed record in an input file."""

    def __init__(self, message: str, path=None, line_number: int | None = None):
        self.path = path
        self.line_number = line_number
        where = ""
        if path is not None:
            where += f"{path}"
        if line_number is not None:
            where += f":{line_number}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(BiastrackError):
    """Invalid experiment configuration; names the offending field."""
