"""Exception hierarchy.

Every error carries a machine-readable ``code``. The CLI maps the three
families below onto exit codes 1 (validation/config), 2 (I/O) and 3
(numeric).
"""

from __future__ import annotations


class TrajoodError(Exception):
    code = "ERROR"

    def __init__(self, message: str, code: str | None = None, **context):
        super().__init__(message)
        if code is not None:
            self.code = code
        self.context = context

    def __str__(self) -> str:
        return f"{self.code}: {self.args[0]}"


class InputError(TrajoodError):
    """Bad data, bad configuration or a violated precondition."""

    code = "VALIDATION_ERROR"


class ParseError(InputError):
    code = "PARSE_ERROR"

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message, line=line, field=field)
        self.line = line
        self.field = field


class ValidationError(InputError):
    code = "VALIDATION_ERROR"

    def __init__(self, message: str, report=None, **context):
        super().__init__(message, **context)
        self.report = list(report or [])


class ConfigError(InputError):
    code = "CONFIG_ERROR"


class StorageError(TrajoodError):
    code = "IO_ERROR"


class NumericError(TrajoodError):
    """Numerical failure (ill-conditioned fit, degenerate data)."""

    code = "NUMERIC_ERROR"


class FitError(NumericError):
    code = "FIT_ERROR"

    def __init__(self, message: str, condition: float | None = None, **context):
        super().__init__(message, condition=condition, **context)
        self.condition = condition
