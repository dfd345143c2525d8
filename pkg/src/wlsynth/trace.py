"""Query-log trace model: records, identity keys, CSV I/O and repetition rate."""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Hashable, Iterable, Sequence

log = logging.getLogger(__name__)

TRACE_COLUMNS = (
    "user_id",
    "query_id",
    "arrival_timestamp",
    "query_type",
    "was_cached",
    "num_joins",
    "num_scans",
    "read_table_ids",
    "feature_fingerprint",
)
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class TraceError(Exception):
    pass


class TraceSchemaError(TraceError):
    pass


class TraceRowError(TraceError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class QueryType(str, enum.Enum):
    SELECT = "select"
    INSERT = "insert"
    UPDATE = "update"
    DELETE = "delete"
    OTHER = "other"


def _table_key(table_id: str) -> tuple:
    return (0, int(table_id), "") if table_id.isascii() and table_id.isdigit() else (1, 0, table_id)


@dataclass(frozen=True, order=True)
class Scanset:
    tables: tuple[str, ...]

    @classmethod
    def of(cls, tables: Iterable[str]) -> "Scanset":
        return cls(tuple(sorted(set(tables), key=_table_key)))

    def __len__(self) -> int:
        return len(self.tables)

    def __str__(self) -> str:
        return ";".join(self.tables)


@dataclass(frozen=True)
class QueryHash:
    scanset: Scanset
    num_joins: int
    num_scans: int
    feature_fingerprint: str


@dataclass(frozen=True)
class QueryRecord:
    user_id: str
    query_id: str
    arrival_timestamp: datetime
    query_type: QueryType
    was_cached: bool
    num_joins: int
    num_scans: int
    read_table_ids: frozenset[str]
    feature_fingerprint: str

    @property
    def scanset(self) -> Scanset:
        return Scanset.of(self.read_table_ids)


def query_id_key(query_id: str) -> tuple:
    """Numeric ids sort numerically, everything else lexicographically after them."""
    return _table_key(query_id)


def record_order_key(record: QueryRecord) -> tuple:
    return (record.arrival_timestamp, query_id_key(record.query_id))


@dataclass
class UserTrace:
    user_id: str
    records: list[QueryRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.records = sorted(self.records, key=record_order_key)

    def __len__(self) -> int:
        return len(self.records)

    def hashes(self) -> list[QueryHash]:
        return [hash_of(r) for r in self.records]


def hash_of(record: QueryRecord) -> QueryHash:
    return QueryHash(
        scanset=record.scanset,
        num_joins=record.num_joins,
        num_scans=record.num_scans,
        feature_fingerprint=record.feature_fingerprint,
    )


def repetition_rate(keys: Sequence[Hashable]) -> float:
    """Fraction of positions whose key already occurred earlier in the sequence."""
    if not keys:
        return 0.0
    seen: set = set()
    repeats = 0
    for key in keys:
        if key in seen:
            repeats += 1
        else:
            seen.add(key)
    return repeats / len(keys)


def parse_timestamp(text: str) -> datetime:
    return datetime.strptime(text, TIMESTAMP_FORMAT).replace(tzinfo=timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime(TIMESTAMP_FORMAT)


def _parse_count(value: str, column: str, line: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise TraceRowError(line, f"{column} is not an integer: {value!r}") from None
    if n < 0:
        raise TraceRowError(line, f"{column} is negative: {n}")
    return n


def _parse_row(row: dict[str, str], line: int) -> QueryRecord:
    try:
        ts = parse_timestamp(row["arrival_timestamp"])
    except ValueError:
        raise TraceRowError(line, f"unparsable arrival_timestamp: {row['arrival_timestamp']!r}") from None
    try:
        qtype = QueryType(row["query_type"].strip().lower())
    except ValueError:
        raise TraceRowError(line, f"unknown query_type: {row['query_type']!r}") from None
    cached = row["was_cached"].strip()
    if cached not in ("0", "1"):
        raise TraceRowError(line, f"was_cached must be 0 or 1, got {cached!r}")
    tables = frozenset(t.strip() for t in row["read_table_ids"].split(";") if t.strip())
    if not row["user_id"] or not row["query_id"]:
        raise TraceRowError(line, "empty user_id or query_id")
    return QueryRecord(
        user_id=row["user_id"],
        query_id=row["query_id"],
        arrival_timestamp=ts,
        query_type=qtype,
        was_cached=cached == "1",
        num_joins=_parse_count(row["num_joins"], "num_joins", line),
        num_scans=_parse_count(row["num_scans"], "num_scans", line),
        read_table_ids=tables,
        feature_fingerprint=row["feature_fingerprint"],
    )


def read_records(path: str | Path, errors: list[TraceRowError] | None = None) -> list[QueryRecord]:
    """Read every row of a trace CSV in file order.

    Malformed rows raise :class:`TraceRowError` unless an ``errors`` list is
    passed, in which case they are appended there and skipped.
    """
    records: list[QueryRecord] = []
    seen_ids: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            raise TraceSchemaError(f"{path}: missing header row")
        for col in TRACE_COLUMNS:
            if col not in header:
                raise TraceSchemaError(f"{path}: missing column {col!r}")
        for col in header:
            if col not in TRACE_COLUMNS:
                raise TraceSchemaError(f"{path}: unknown column {col!r}")
        for row in reader:
            line = reader.line_num
            try:
                if None in row or any(v is None for v in row.values()):
                    raise TraceRowError(line, "wrong number of fields")
                rec = _parse_row(row, line)
                if rec.query_id in seen_ids:
                    raise TraceRowError(line, f"duplicate query_id {rec.query_id!r}")
            except TraceRowError as exc:
                if errors is None:
                    raise
                errors.append(exc)
                continue
            seen_ids.add(rec.query_id)
            records.append(rec)
    if errors:
        log.warning("%s: skipped %d malformed rows", path, len(errors))
    return records


def group_by_user(records: Iterable[QueryRecord]) -> list[UserTrace]:
    by_user: dict[str, list[QueryRecord]] = {}
    for rec in records:
        by_user.setdefault(rec.user_id, []).append(rec)
    return [UserTrace(uid, recs) for uid, recs in sorted(by_user.items(), key=lambda kv: query_id_key(kv[0]))]


def parse_trace(path: str | Path, errors: list[TraceRowError] | None = None) -> list[UserTrace]:
    """Parse a trace CSV into per-user traces sorted by (timestamp, query_id)."""
    return group_by_user(read_records(path, errors))


def record_row(rec: QueryRecord) -> list[str]:
    return [
        rec.user_id,
        rec.query_id,
        format_timestamp(rec.arrival_timestamp),
        rec.query_type.value,
        "1" if rec.was_cached else "0",
        str(rec.num_joins),
        str(rec.num_scans),
        str(rec.scanset),
        rec.feature_fingerprint,
    ]


def write_records(records: Iterable[QueryRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            writer.writerow(record_row(rec))


def write_trace(traces: Iterable[UserTrace], path: str | Path) -> None:
    write_records((rec for t in traces for rec in t.records), path)
