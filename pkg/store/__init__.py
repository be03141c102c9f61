"""Narrow-format, file-backed time-series store.

One directory per store, one CSV file per table, an index JSON for key counters.
"""

from .errors import ForeignKeyError, IntegrityError, NotFoundError, StoreError
from .records import RunRecord, RunStatus
from .timeseries import METRIC_TABLES, TABLE_COLUMNS, SeriesTable, TimeSeriesStore

__all__ = [
    "ForeignKeyError",
    "IntegrityError",
    "METRIC_TABLES",
    "NotFoundError",
    "RunRecord",
    "RunStatus",
    "SeriesTable",
    "StoreError",
    "TABLE_COLUMNS",
    "TimeSeriesStore",
]
