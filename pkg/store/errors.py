"""Store errors."""

from typing import Any


class StoreError(Exception):
    """Base class for store failures."""


class IntegrityError(StoreError):
    """A write would duplicate an existing key."""

    def __init__(self, table: str, key: Any, message: str = ""):
        self.table = table
        self.key = key
        super().__init__(message or f"Duplicate key {key!r} in table '{table}'")


class ForeignKeyError(StoreError):
    """A row references a run, machine or quantity that does not exist."""

    def __init__(self, table: str, column: str, value: Any):
        self.table = table
        self.column = column
        self.value = value
        super().__init__(f"Table '{table}': {column}={value!r} does not exist")


class NotFoundError(StoreError):
    def __init__(self, entity: str, key: Any):
        self.entity = entity
        self.key = key
        super().__init__(f"{entity} {key!r} not found")


class StoreLockedError(StoreError):
    def __init__(self, path: str, waited_s: float):
        self.path = path
        self.waited_s = waited_s
        super().__init__(f"Store lock {path} still held after {waited_s:.1f} s")
