from __future__ import annotations


class InfoNeatError(Exception):
    """Base class for all errors raised by infoneat."""


class InputError(InfoNeatError, ValueError):
    """Raised when an argument has an invalid value or shape."""


class SizeError(InputError):
    """Raised when too few samples are supplied."""

    def __init__(self, required: int, actual: int, what: str = "samples") -> None:
        self.required = required
        self.actual = actual
        super().__init__(f"Need at least {required} {what}, got {actual}")


class NumericError(InfoNeatError, ArithmeticError):
    """Raised when a numerical routine fails or returns an invalid result."""


class StructureError(InfoNeatError):
    """Raised when a genome violates its structural invariants."""

    def __init__(self, message: str, nodes: list[int] | None = None) -> None:
        self.nodes = nodes or []
        if self.nodes:
            message = f"{message} (nodes: {', '.join(map(str, self.nodes))})"
        super().__init__(message)


class FormatError(InfoNeatError):
    """Raised when a file cannot be parsed."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        self.offset = offset
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)


class ValidationError(InfoNeatError):
    """Raised when configuration validation fails at build time."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = errors
        message = "Validation failed:\n" + "\n".join(f"  - {e}" for e in errors)
        super().__init__(message)
