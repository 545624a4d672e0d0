"""Error types shared across the package.

Everything derives from MafError so callers can catch package failures
with one except clause. ShapeError and ContractError signal misuse of an
operation (bad dimensions, violated precondition); the data errors carry
enough location detail to point at the offending line of a corpus file.
"""

from __future__ import annotations


class MafError(Exception):
    """Base class for all package errors."""


class ShapeError(MafError, ValueError):
    """Operands have incompatible dimensions. The message names both shapes."""


class ContractError(MafError, ValueError):
    """A documented precondition of an operation was violated."""


class ParseError(MafError, ValueError):
    """A corpus file line is structurally invalid (bad JSON, missing field)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(MafError, ValueError):
    """A parsed record violates a dataset invariant.

    `field` and `rule` identify what failed; `line` locates the record when
    the instance came from a file.
    """

    def __init__(self, message: str, *, field: str, rule: str, line: int | None = None):
        self.field = field
        self.rule = rule
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}field '{field}' violates rule '{rule}': {message}")


class ConfigError(MafError, ValueError):
    """An experiment or model configuration is invalid. CLI exit code 2."""


class TrainingDivergedError(MafError, RuntimeError):
    """Training produced a non-finite loss. The message names the step."""
