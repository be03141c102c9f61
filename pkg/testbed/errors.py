"""Errors raised by the crane testbed."""

from typing import Optional


class DomainError(ValueError):
    """A value lies outside the domain the model is defined on."""

    def __init__(self, field: str, value: object, message: Optional[str] = None):
        self.field = field
        self.value = value
        super().__init__(message or f"Invalid value for '{field}': {value!r}")


class PreconditionError(ValueError):
    """An operation was called with inputs that violate its preconditions."""

    def __init__(self, operation: str, message: str):
        self.operation = operation
        super().__init__(f"{operation}: {message}")
