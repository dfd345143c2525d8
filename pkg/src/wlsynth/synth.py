"""Synthetic traces in the trace CSV schema with an exact repetition rate."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

from .prefilter import WEEK_SPAN
from .rng import SplitMix64
from .trace import QueryRecord, QueryType, write_records

# A Monday, 08:00 UTC.
EPOCH = datetime(2024, 3, 4, 8, 0, tzinfo=timezone.utc)
NON_SELECT_TYPES = (QueryType.INSERT, QueryType.UPDATE, QueryType.DELETE, QueryType.OTHER)


class SynthSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    users: int
    queries_per_user: int
    # One rate for every user, or one per user (cycled when shorter).
    target_rate: float | Sequence[float] = 0.5
    join_range: tuple[int, int] = (1, 4)
    table_universe: int = 8
    cached_fraction: float = 0.0
    non_select_fraction: float = 0.0
    nonconforming_fraction: float = 0.0
    # Chance that a new distinct query reuses an earlier scanset.
    scanset_reuse: float = 0.3
    week_span: int = 1
    seed: int = 0

    def rates(self) -> list[float]:
        rates = [self.target_rate] if isinstance(self.target_rate, (int, float)) else list(self.target_rate)
        if not rates:
            raise SynthSpecError("target_rate list is empty")
        return [float(rates[i % len(rates)]) for i in range(self.users)]

    def validate(self) -> None:
        n = self.queries_per_user
        if self.users < 1 or n < 1:
            raise SynthSpecError("users and queries_per_user must be positive")
        for r in self.rates():
            if not 0.0 <= r <= (n - 1) / n + 1e-12:
                raise SynthSpecError(f"target rate {r} infeasible for n={n}: must lie in [0, {(n - 1) / n}]")
            if abs(r * n - round(r * n)) > 1e-9:
                raise SynthSpecError(f"target rate {r} times n={n} is not an integer")
        jmin, jmax = self.join_range
        if not 1 <= jmin <= jmax:
            raise SynthSpecError(f"join range {self.join_range} must satisfy 1 <= min <= max")
        if self.table_universe < jmax + 1:
            raise SynthSpecError(f"table universe {self.table_universe} too small for {jmax} joins")
        for name in ("cached_fraction", "non_select_fraction", "nonconforming_fraction", "scanset_reuse"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SynthSpecError(f"{name} must lie in [0, 1]")
        if self.week_span < 1:
            raise SynthSpecError("week_span must be positive")


class _Generator:
    def __init__(self, spec: SynthSpec) -> None:
        self.spec = spec
        self.rng = SplitMix64(spec.seed)
        self.tables = [str(t) for t in range(spec.table_universe)]
        self.next_fp = 0
        self.next_qid = 0

    def fingerprint(self) -> str:
        self.next_fp += 1
        return f"fp{self.next_fp:06d}"

    def new_shape(self, shapes: list[tuple]) -> tuple:
        jmin, jmax = self.spec.join_range
        k = len(shapes)
        if k >= 2 and self.rng.random() < self.spec.scanset_reuse:
            tables, joins = self.rng.choice(shapes)[:2]
        else:
            joins = jmin if k == 0 else jmax if k == 1 else jmin + self.rng.below(jmax - jmin + 1)
            tables = frozenset(self.rng.sample(self.tables, joins + 1))
        return (tables, joins, joins + 1, self.fingerprint())

    def user(self, index: int, rate: float) -> list[QueryRecord]:
        spec, rng = self.spec, self.rng
        n = spec.queries_per_user
        repeats = round(rate * n)
        new_at = {0} | set(rng.sample(range(1, n), n - repeats - 1))
        shapes: list[tuple] = []
        rows: list[tuple] = []  # (type, cached, joins, scans, tables, fp)
        for pos in range(n):
            if pos in new_at:
                shapes.append(self.new_shape(shapes))
                shape = shapes[-1]
            else:
                shape = rng.choice(shapes)
            tables, joins, scans, fp = shape
            rows.append((QueryType.SELECT, False, joins, scans, tables, fp))

        noise = []
        for _ in range(round(spec.cached_fraction * n)):
            tables, joins, scans, _fp = rng.choice(shapes)
            noise.append((QueryType.SELECT, True, joins, scans, tables, self.fingerprint()))
        for _ in range(round(spec.non_select_fraction * n)):
            tables, joins, scans, _fp = rng.choice(shapes)
            noise.append((rng.choice(NON_SELECT_TYPES), False, joins, scans, tables, self.fingerprint()))
        for _ in range(round(spec.nonconforming_fraction * n)):
            if rng.below(2):
                tables = frozenset(rng.sample(self.tables, 1))
                noise.append((QueryType.SELECT, False, 0, 1, tables, self.fingerprint()))
            else:
                tables, joins, scans, _fp = rng.choice(shapes)
                noise.append((QueryType.SELECT, False, joins + 1, scans, tables, self.fingerprint()))
        for row in noise:
            rows.insert(rng.below(len(rows) + 1), row)

        span = int(WEEK_SPAN.total_seconds())
        offsets = sorted(rng.below(spec.week_span) * 7 * 86400 + rng.below(span) for _ in rows)
        user_id = f"u{index:03d}"
        records = []
        for (qtype, cached, joins, scans, tables, fp), offset in zip(rows, offsets):
            self.next_qid += 1
            records.append(
                QueryRecord(
                    user_id=user_id,
                    query_id=str(self.next_qid),
                    arrival_timestamp=EPOCH + timedelta(seconds=offset),
                    query_type=qtype,
                    was_cached=cached,
                    num_joins=joins,
                    num_scans=scans,
                    read_table_ids=tables,
                    feature_fingerprint=fp,
                )
            )
        return records


def synthesize(spec: SynthSpec) -> list[QueryRecord]:
    """Generate the trace for ``spec``, users in order, each sorted by arrival.

    Without noise rows and with ``week_span=1`` every record survives the
    query rules and the busiest-week cut (for n <= K), so each user's measured
    repetition rate equals its target exactly.
    """
    spec.validate()
    gen = _Generator(spec)
    records = []
    for index, rate in enumerate(spec.rates()):
        records.extend(gen.user(index, rate))
    return records


def synthesize_to(spec: SynthSpec, path: str | Path) -> list[QueryRecord]:
    records = synthesize(spec)
    write_records(records, path)
    return records
