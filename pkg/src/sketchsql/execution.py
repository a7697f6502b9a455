"""SQL execution against SQLite with outcome classification and result
comparison.

Every run is classified as Error (engine rejection or timeout, message
kept verbatim so it can be fed back to the completer), Null (empty result
or rows that are entirely NULL, e.g. an aggregate over an empty
relation), or Rows.  Comparison for the accuracy metric is multiset-based
with numeric tolerance; column names are deliberately ignored since
equivalent queries alias freely.
"""

from __future__ import annotations

import logging
import os
import sqlite3
import threading
import time
import urllib.parse
from dataclasses import dataclass

from .errors import DatabaseAccessError
from .schema import DatabaseSchema, schema_from_sqlite

log = logging.getLogger(__name__)

DEFAULT_STATEMENT_TIMEOUT = 30.0
# How many SQLite VM instructions run between timeout checks.
_PROGRESS_INTERVAL = 10_000

ERROR = "error"
NULL = "null"
ROWS = "rows"


@dataclass(frozen=True)
class ResultSet:
    column_count: int
    rows: tuple

    def all_null(self) -> bool:
        return all(value is None for row in self.rows for value in row)


@dataclass(frozen=True)
class ExecutionOutcome:
    """Classified result of one statement execution.

    ``result`` is populated for both ``rows`` and ``null`` outcomes: a
    null-classified result still has a concrete (possibly empty) row set
    that the accuracy metric compares directly.
    """

    kind: str
    message: str | None = None
    result: ResultSet | None = None

    @classmethod
    def error(cls, message: str) -> "ExecutionOutcome":
        return cls(ERROR, message=message)

    @classmethod
    def from_result(cls, result: ResultSet) -> "ExecutionOutcome":
        if not result.rows or result.all_null():
            return cls(NULL, result=result)
        return cls(ROWS, result=result)

    @property
    def is_error(self) -> bool:
        return self.kind == ERROR

    @property
    def is_null(self) -> bool:
        return self.kind == NULL

    @property
    def is_rows(self) -> bool:
        return self.kind == ROWS


def quote_identifier(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


class Database:
    """Read-only handle on a SQLite database file.

    Each operation opens its own connection, so one Database may be shared
    freely across threads.  Text is decoded as UTF-8 with replacement:
    several benchmark databases contain stray non-UTF-8 bytes, and a
    consistent lossy decode keeps gold and predicted results comparable.
    """

    def __init__(self, path, default_timeout: float = DEFAULT_STATEMENT_TIMEOUT):
        self.path = os.fspath(path)
        if not os.path.exists(self.path):
            raise DatabaseAccessError(f"database file not found: {self.path}")
        self.default_timeout = default_timeout
        self._schema: DatabaseSchema | None = None
        self._schema_lock = threading.Lock()

    @property
    def schema(self) -> DatabaseSchema:
        with self._schema_lock:
            if self._schema is None:
                self._schema = schema_from_sqlite(self.path)
            return self._schema

    def connect(self) -> sqlite3.Connection:
        uri = f"file:{urllib.parse.quote(self.path)}?mode=ro"
        conn = sqlite3.connect(uri, uri=True)
        conn.text_factory = lambda data: data.decode("utf-8", "replace")
        return conn

    def execute(self, sql: str, timeout: float | None = None) -> ExecutionOutcome:
        """Run ``sql`` and classify the outcome.  Never raises: engine
        errors, timeouts, and connection failures all become Error
        outcomes with the underlying message preserved verbatim."""
        limit = self.default_timeout if timeout is None else timeout
        try:
            conn = self.connect()
        except Exception as exc:  # connection failure -> Error outcome
            return ExecutionOutcome.error(str(exc))
        try:
            if limit and limit > 0:
                deadline = time.monotonic() + limit
                conn.set_progress_handler(
                    lambda: 1 if time.monotonic() > deadline else 0,
                    _PROGRESS_INTERVAL,
                )
            cursor = conn.execute(sql)
            rows = tuple(tuple(row) for row in cursor.fetchall())
            column_count = len(cursor.description) if cursor.description else 0
            return ExecutionOutcome.from_result(ResultSet(column_count, rows))
        except Exception as exc:
            return ExecutionOutcome.error(str(exc))
        finally:
            conn.close()

    def distinct_text_values(self, table: str, column: str, cap: int) -> list[str]:
        """Distinct non-empty text-typed values of one column, sorted,
        capped at ``cap``.  The runtime ``typeof`` filter (rather than the
        declared column type) keeps the scan meaningful under SQLite's
        flexible typing."""
        query = (
            f"SELECT DISTINCT {quote_identifier(column)} "
            f"FROM {quote_identifier(table)} "
            f"WHERE typeof({quote_identifier(column)}) = 'text' "
            f"AND {quote_identifier(column)} <> '' "
            f"ORDER BY 1 LIMIT ?"
        )
        try:
            with self.connect() as conn:
                return [row[0] for row in conn.execute(query, (cap,))]
        except sqlite3.Error as exc:
            raise DatabaseAccessError(
                f"cannot scan {table}.{column} in {self.path}: {exc}") from exc

    def has_value(self, table: str, column: str, value: str) -> bool:
        query = (
            f"SELECT 1 FROM {quote_identifier(table)} "
            f"WHERE {quote_identifier(column)} = ? LIMIT 1"
        )
        try:
            with self.connect() as conn:
                return conn.execute(query, (value,)).fetchone() is not None
        except sqlite3.Error as exc:
            raise DatabaseAccessError(
                f"cannot probe {table}.{column} in {self.path}: {exc}") from exc


def execute(db, sql: str, timeout: float | None = None) -> ExecutionOutcome:
    """Convenience wrapper: ``db`` may be a Database or a file path."""
    if not isinstance(db, Database):
        db = Database(db)
    return db.execute(sql, timeout)


# --------------------------------------------------------------------------
# Result comparison

def _cell_key(value):
    if value is None:
        return (0, "")
    if isinstance(value, (int, float)):
        return (1, float(value))
    if isinstance(value, str):
        return (2, value)
    if isinstance(value, bytes):
        return (3, value)
    return (4, repr(value))


def _row_key(row):
    return tuple(_cell_key(value) for value in row)


def _cell_equal(x, y, tol: float) -> bool:
    if x is None or y is None:
        return x is y
    if isinstance(x, (int, float)) and isinstance(y, (int, float)):
        return x == y or abs(x - y) <= tol
    if type(x) is type(y):
        return x == y
    return False


def _row_equal(a, b, tol: float) -> bool:
    return len(a) == len(b) and all(_cell_equal(x, y, tol) for x, y in zip(a, b))


def results_equal(predicted: ResultSet, gold: ResultSet,
                  order_sensitive: bool = False, tol: float = 1e-6) -> bool:
    """Compare two result sets for the accuracy metric.

    Column counts and row multisets must match (row sequences when
    ``order_sensitive``); numbers compare with absolute tolerance ``tol``,
    NULL equals only NULL, and column names are ignored.
    """
    if predicted.column_count != gold.column_count:
        return False
    if len(predicted.rows) != len(gold.rows):
        return False
    left, right = predicted.rows, gold.rows
    if not order_sensitive:
        left = sorted(left, key=_row_key)
        right = sorted(right, key=_row_key)
    return all(_row_equal(a, b, tol) for a, b in zip(left, right))
