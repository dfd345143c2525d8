"""Query/user elimination rules and busiest-week reduction."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, time, timedelta
from pathlib import Path
from typing import Iterable

from .trace import QueryRecord, QueryType, UserTrace

log = logging.getLogger(__name__)

DEFAULT_K = 1000
WEEK_SPAN = timedelta(days=4, hours=9)  # Monday 08:00 -> Friday 17:00
WEEK_OPEN = time(8, 0)

# Query rules, in attribution order.
NOT_SELECT = "not_select"
RESULT_CACHED = "result_cached"
NO_JOINS = "no_joins"
JOINS_MISMATCH = "joins_not_scanset_minus_one"
QUERY_RULES = (NOT_SELECT, RESULT_CACHED, NO_JOINS, JOINS_MISMATCH)

OUTSIDE_WINDOW = "outside_week_window"
OTHER_WEEK = "not_busiest_week"
BEYOND_K = "beyond_first_k"
NO_WINDOW = "no_week_window"

EMPTY_USER = "no_surviving_queries"
CONSTANT_JOINS = "constant_join_count"


class PrefilterError(Exception):
    pass


class NoWeekWindowError(PrefilterError):
    pass


@dataclass(frozen=True, order=True)
class WeekWindow:
    start: datetime

    @property
    def end(self) -> datetime:
        return self.start + WEEK_SPAN

    def __contains__(self, ts: datetime) -> bool:
        return self.start <= ts < self.end


def week_window_of(ts: datetime) -> WeekWindow | None:
    """The Monday-08:00 window containing ``ts``, or None for off-window instants."""
    monday = ts.date() - timedelta(days=ts.weekday())
    window = WeekWindow(datetime.combine(monday, WEEK_OPEN, tzinfo=ts.tzinfo))
    return window if ts in window else None


@dataclass
class PrefilterStats:
    stage: str
    records_in: int = 0
    records_out: int = 0
    users_in: int = 0
    users_out: int = 0
    removed_records: dict[str, int] = field(default_factory=dict)
    removed_users: dict[str, int] = field(default_factory=dict)

    def drop_records(self, rule: str, n: int = 1) -> None:
        self.removed_records[rule] = self.removed_records.get(rule, 0) + n

    def drop_user(self, rule: str) -> None:
        self.removed_users[rule] = self.removed_users.get(rule, 0) + 1

    def merge(self, other: "PrefilterStats") -> "PrefilterStats":
        out = PrefilterStats(
            self.stage,
            self.records_in + other.records_in,
            self.records_out + other.records_out,
            self.users_in + other.users_in,
            self.users_out + other.users_out,
            dict(self.removed_records),
            dict(self.removed_users),
        )
        for rule, n in other.removed_records.items():
            out.drop_records(rule, n)
        for rule, n in other.removed_users.items():
            out.removed_users[rule] = out.removed_users.get(rule, 0) + n
        return out

    def is_conserved(self) -> bool:
        return (
            sum(self.removed_records.values()) + self.records_out == self.records_in
            and sum(self.removed_users.values()) + self.users_out == self.users_in
        )


def violated_rule(rec: QueryRecord) -> str | None:
    """First query rule the record violates, or None if it is kept."""
    if rec.query_type is not QueryType.SELECT:
        return NOT_SELECT
    if rec.was_cached:
        return RESULT_CACHED
    if rec.num_joins < 1:
        return NO_JOINS
    if rec.num_joins != len(rec.read_table_ids) - 1:
        return JOINS_MISMATCH
    return None


def filter_queries(records: Iterable[QueryRecord]) -> tuple[list[QueryRecord], PrefilterStats]:
    stats = PrefilterStats("queries", removed_records=dict.fromkeys(QUERY_RULES, 0))
    kept = []
    for rec in records:
        stats.records_in += 1
        rule = violated_rule(rec)
        if rule is None:
            kept.append(rec)
        else:
            stats.drop_records(rule)
    stats.records_out = len(kept)
    return kept, stats


def filter_users(traces: Iterable[UserTrace]) -> tuple[list[UserTrace], PrefilterStats]:
    stats = PrefilterStats(
        "users",
        removed_records=dict.fromkeys((EMPTY_USER, CONSTANT_JOINS), 0),
        removed_users=dict.fromkeys((EMPTY_USER, CONSTANT_JOINS), 0),
    )
    kept = []
    for trace in traces:
        stats.users_in += 1
        stats.records_in += len(trace)
        if not trace.records:
            stats.drop_user(EMPTY_USER)
            continue
        joins = [r.num_joins for r in trace.records]
        if min(joins) == max(joins):
            stats.drop_user(CONSTANT_JOINS)
            stats.drop_records(CONSTANT_JOINS, len(trace))
            continue
        kept.append(trace)
        stats.users_out += 1
        stats.records_out += len(trace)
    return kept, stats


def busiest_week(trace: UserTrace, k: int = DEFAULT_K) -> UserTrace:
    """First ``k`` records of the user's busiest Monday-08:00 to Friday-17:00 window.

    Ties between equally busy windows go to the earliest one.
    """
    if k < 1:
        raise ValueError("k must be positive")
    windows: dict[WeekWindow, list[QueryRecord]] = {}
    for rec in trace.records:
        window = week_window_of(rec.arrival_timestamp)
        if window is not None:
            windows.setdefault(window, []).append(rec)
    if not windows:
        raise NoWeekWindowError(f"user {trace.user_id}: no query inside any week window")
    best = min(windows, key=lambda w: (-len(windows[w]), w.start))
    # trace.records is sorted, so each window list is too
    return UserTrace(trace.user_id, windows[best][:k])


def run_prefilter(traces: Iterable[UserTrace], k: int = DEFAULT_K) -> tuple[list[UserTrace], list[PrefilterStats]]:
    """Query rules, then busiest week, then user rules."""
    traces = list(traces)
    q_stats = PrefilterStats("queries", removed_records=dict.fromkeys(QUERY_RULES, 0))
    filtered = []
    for trace in traces:
        kept, s = filter_queries(trace.records)
        q_stats = q_stats.merge(s)
        filtered.append(UserTrace(trace.user_id, kept))
    q_stats.users_in = q_stats.users_out = len(filtered)

    w_stats = PrefilterStats(
        "busiest_week",
        removed_records=dict.fromkeys((OUTSIDE_WINDOW, OTHER_WEEK, BEYOND_K), 0),
        removed_users={NO_WINDOW: 0},
    )
    weekly = []
    for trace in filtered:
        w_stats.users_in += 1
        w_stats.records_in += len(trace)
        if not trace.records:
            weekly.append(trace)
            w_stats.users_out += 1
            continue
        try:
            reduced = busiest_week(trace, k)
        except NoWeekWindowError as exc:
            log.info("%s", exc)
            w_stats.drop_user(NO_WINDOW)
            w_stats.drop_records(OUTSIDE_WINDOW, len(trace))
            continue
        in_window = [r for r in trace.records if week_window_of(r.arrival_timestamp) is not None]
        chosen = week_window_of(reduced.records[0].arrival_timestamp)
        in_chosen = sum(1 for r in in_window if week_window_of(r.arrival_timestamp) == chosen)
        w_stats.drop_records(OUTSIDE_WINDOW, len(trace) - len(in_window))
        w_stats.drop_records(OTHER_WEEK, len(in_window) - in_chosen)
        w_stats.drop_records(BEYOND_K, in_chosen - len(reduced))
        weekly.append(reduced)
        w_stats.users_out += 1
        w_stats.records_out += len(reduced)

    survivors, u_stats = filter_users(weekly)
    return survivors, [q_stats, w_stats, u_stats]


def select_share(records: Iterable[QueryRecord]) -> float:
    """Fraction of records that are SELECT queries (0.0 for an empty trace)."""
    total = selects = 0
    for rec in records:
        total += 1
        selects += rec.query_type is QueryType.SELECT
    return selects / total if total else 0.0


def write_stats(stats: list[PrefilterStats], csv_path: str | Path, json_path: str | Path | None = None) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "rule", "unit", "removed_count"])
        for s in stats:
            for rule, n in s.removed_records.items():
                writer.writerow([s.stage, rule, "records", n])
            for rule, n in s.removed_users.items():
                writer.writerow([s.stage, rule, "users", n])
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([asdict(s) for s in stats], fh, indent=2, sort_keys=True)
            fh.write("\n")
