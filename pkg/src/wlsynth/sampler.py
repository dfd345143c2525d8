"""Repetition-rate bucketing and representative user selection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .trace import UserTrace, query_id_key, repetition_rate

NUM_BUCKETS = 10
DEFAULT_PER_BUCKET = 3
SELECTION_COLUMNS = ("bucket", "user_id", "role", "repetition_rate", "total_variability")


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    repetition_rate: float
    distinct_join_values: int
    distinct_scansets: int
    bucket: int


@dataclass(frozen=True)
class VariabilityScore:
    user_id: str
    join_rank: int
    scanset_rank: int

    @property
    def total(self) -> int:
        return self.join_rank + self.scanset_rank


@dataclass(frozen=True)
class SelectedUser:
    profile: UserProfile
    role: str
    total_variability: int


def bucket_of(rate: float) -> int:
    """Bucket b covers [b/10, (b+1)/10); the top bucket also takes 1.0."""
    if not 0.0 <= rate <= 1.0 or math.isnan(rate):
        raise ValueError(f"repetition rate {rate!r} outside [0, 1]")
    return min(math.floor(rate * NUM_BUCKETS), NUM_BUCKETS - 1)


def profile(trace: UserTrace) -> UserProfile:
    rate = repetition_rate(trace.hashes())
    return UserProfile(
        user_id=trace.user_id,
        repetition_rate=rate,
        distinct_join_values=len({r.num_joins for r in trace.records}),
        distinct_scansets=len({r.scanset for r in trace.records}),
        bucket=bucket_of(rate),
    )


def _uid(p: UserProfile) -> tuple:
    return query_id_key(p.user_id)


def rank_bucket(profiles: list[UserProfile]) -> list[VariabilityScore]:
    """Ordinal ranks (1..n) on both diversity counts, ties broken by user id.

    Scores come back in the order of ``profiles``.
    """
    if len({p.bucket for p in profiles}) > 1:
        raise ValueError("rank_bucket expects profiles from a single bucket")
    by_joins = sorted(profiles, key=lambda p: (p.distinct_join_values, _uid(p)))
    by_scansets = sorted(profiles, key=lambda p: (p.distinct_scansets, _uid(p)))
    join_rank = {p.user_id: i + 1 for i, p in enumerate(by_joins)}
    scanset_rank = {p.user_id: i + 1 for i, p in enumerate(by_scansets)}
    return [VariabilityScore(p.user_id, join_rank[p.user_id], scanset_rank[p.user_id]) for p in profiles]


def _pick_positions(n: int, per_bucket: int) -> list[tuple[int, str]]:
    if per_bucket == 1:
        return [((n - 1) // 2, "median")]
    picks = []
    for i in range(per_bucket):
        pos = i * (n - 1) // (per_bucket - 1)
        if i == 0:
            role = "lowest"
        elif i == per_bucket - 1:
            role = "highest"
        elif 2 * i == per_bucket - 1:
            role = "median"
        else:
            role = f"q{i}"
        picks.append((pos, role))
    return picks


def group_buckets(profiles: Iterable[UserProfile]) -> dict[int, list[UserProfile]]:
    buckets: dict[int, list[UserProfile]] = {b: [] for b in range(NUM_BUCKETS)}
    for p in profiles:
        buckets[p.bucket].append(p)
    return buckets


def select_users(profiles: Iterable[UserProfile], per_bucket: int = DEFAULT_PER_BUCKET) -> list[SelectedUser]:
    """Lowest, (lower) median and highest variability user of every bucket.

    With ``per_bucket`` other than 3 the picks are spread evenly over the
    variability order.  A user that lands on several positions is kept once,
    under the first role.
    """
    if per_bucket < 1:
        raise ValueError("per_bucket must be at least 1")
    selected = []
    for bucket, members in group_buckets(profiles).items():
        if not members:
            continue
        totals = {s.user_id: s.total for s in rank_bucket(members)}
        ordered = sorted(members, key=lambda p: (totals[p.user_id], _uid(p)))
        taken: set[str] = set()
        for pos, role in _pick_positions(len(ordered), per_bucket):
            p = ordered[pos]
            if p.user_id in taken:
                continue
            taken.add(p.user_id)
            selected.append(SelectedUser(p, role, totals[p.user_id]))
    return selected


def bucket_warnings(profiles: Iterable[UserProfile], per_bucket: int = DEFAULT_PER_BUCKET) -> list[str]:
    warnings = []
    for bucket, members in group_buckets(profiles).items():
        if len(members) < per_bucket:
            lo, hi = bucket * 10, bucket * 10 + 10
            warnings.append(
                f"bucket {bucket} ({lo}%-{hi}%) has {len(members)} user(s), fewer than {per_bucket}"
            )
    return warnings


def write_selection(selected: Iterable[SelectedUser], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SELECTION_COLUMNS)
        for s in selected:
            writer.writerow([s.profile.bucket, s.profile.user_id, s.role, repr(s.profile.repetition_rate), s.total_variability])
