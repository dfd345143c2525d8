"""Replay a user trace onto a benchmark pool, query by query.

Each trace query is mapped, in arrival order, by the first rule that applies:

* ``hash_hit``: its hash was seen before, so emit the same instance again.
* ``scanset_hit``: its scanset was seen before, so take an unused instance of
  the template bound to that scanset.
* ``new_template``: bind the new scanset to the unmapped template whose
  normalized join count is closest, preferring the one with most instances.
* ``fallback_unused`` / ``fallback_reuse``: the pool ran out, so take an
  unused instance of an already-mapped closest template, or reuse any
  instance of a closest template.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .pool import DEGENERATE_NORM, PoolIndex
from .rng import SplitMix64
from .sampler import bucket_of
from .trace import QueryHash, QueryRecord, Scanset, UserTrace, hash_of, repetition_rate

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("seq", "source_query_id", "map_case", "template_id", "instance_id")


class MappingError(Exception):
    pass


class MapCase(str, enum.Enum):
    HASH_HIT = "hash_hit"
    SCANSET_HIT = "scanset_hit"
    NEW_TEMPLATE = "new_template"
    FALLBACK_UNUSED = "fallback_unused"
    FALLBACK_REUSE = "fallback_reuse"

    @property
    def is_fallback(self) -> bool:
        return self in (MapCase.FALLBACK_UNUSED, MapCase.FALLBACK_REUSE)


def normalized_joins(j: int, jmin: int, jmax: int) -> float:
    if not jmin <= j <= jmax:
        raise ValueError(f"join count {j} outside [{jmin}, {jmax}]")
    if jmin == jmax:
        # only reachable for users that skipped prefiltering
        return DEGENERATE_NORM
    return (j - jmin) / (jmax - jmin)


def closest_templates(user_norm: float, pool: PoolIndex) -> list[str]:
    """All templates at minimal normalized-join distance, sorted by id."""
    if not pool.templates:
        raise MappingError("empty pool")
    dist = {tid: abs(pool.normalized_join(tid) - user_norm) for tid in pool.templates}
    best = min(dist.values())
    return [tid for tid, d in dist.items() if d == best]


@dataclass
class MappingState:
    rng: SplitMix64
    user_join_min: int
    user_join_max: int
    hash_to_instance: dict[QueryHash, str] = field(default_factory=dict)
    scanset_to_template: dict[Scanset, str] = field(default_factory=dict)
    used_instances: dict[str, set[str]] = field(default_factory=dict)
    mapped_templates: set[str] = field(default_factory=set)

    @classmethod
    def for_trace(cls, trace: UserTrace, seed: int) -> "MappingState":
        if not trace.records:
            raise MappingError(f"user {trace.user_id}: empty trace")
        joins = [r.num_joins for r in trace.records]
        return cls(SplitMix64.for_user(seed, trace.user_id), min(joins), max(joins))

    def unused(self, pool: PoolIndex, template_id: str) -> list[str]:
        used = self.used_instances.get(template_id, set())
        return [i for i in pool.templates[template_id].instance_ids if i not in used]

    def take(self, template_id: str, instance_id: str) -> str:
        self.used_instances.setdefault(template_id, set()).add(instance_id)
        return instance_id


@dataclass(frozen=True)
class MappedQuery:
    seq: int
    source_query_id: str
    source_hash: QueryHash
    instance_id: str
    template_id: str
    map_case: MapCase


@dataclass
class Workload:
    user_id: str
    bucket: int
    seed: int
    queries: list[MappedQuery]

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def fallback_fraction(self) -> float:
        if not self.queries:
            return 0.0
        return sum(q.map_case.is_fallback for q in self.queries) / len(self.queries)


def _fallback(state: MappingState, pool: PoolIndex, closest: list[str]) -> tuple[str, str, MapCase]:
    candidates = [
        (tid, iid)
        for tid in closest
        if tid in state.mapped_templates
        for iid in state.unused(pool, tid)
    ]
    case = MapCase.FALLBACK_UNUSED
    if not candidates:
        candidates = [(tid, iid) for tid in closest for iid in pool.templates[tid].instance_ids]
        case = MapCase.FALLBACK_REUSE
    candidates.sort(key=lambda c: c[1])
    tid, iid = state.rng.choice(candidates)
    return tid, state.take(tid, iid), case


def map_query(state: MappingState, record: QueryRecord, pool: PoolIndex, seq: int = 0) -> MappedQuery:
    h = hash_of(record)
    if h in state.hash_to_instance:
        iid = state.hash_to_instance[h]
        return MappedQuery(seq, record.query_id, h, iid, pool.instances[iid].template_id, MapCase.HASH_HIT)

    user_norm = normalized_joins(record.num_joins, state.user_join_min, state.user_join_max)
    scanset = h.scanset
    tid = iid = None
    if scanset in state.scanset_to_template:
        bound = state.scanset_to_template[scanset]
        unused = state.unused(pool, bound)
        if unused:
            tid, iid, case = bound, state.take(bound, state.rng.choice(unused)), MapCase.SCANSET_HIT
    else:
        open_templates = [t for t in closest_templates(user_norm, pool) if t not in state.mapped_templates]
        if open_templates:
            # most instances wins, then smallest id
            chosen = min(open_templates, key=lambda t: (-len(pool.templates[t].instances), t))
            state.scanset_to_template[scanset] = chosen
            state.mapped_templates.add(chosen)
            unused = state.unused(pool, chosen)
            if unused:
                tid, iid, case = chosen, state.take(chosen, state.rng.choice(unused)), MapCase.NEW_TEMPLATE
    if iid is None:
        tid, iid, case = _fallback(state, pool, closest_templates(user_norm, pool))
    state.hash_to_instance[h] = iid
    return MappedQuery(seq, record.query_id, h, iid, tid, case)


def generate_workload(trace: UserTrace, pool: PoolIndex, seed: int = 0) -> Workload:
    """Map every query of a (prefiltered, busiest-week) trace in arrival order."""
    state = MappingState.for_trace(trace, seed)
    queries = [map_query(state, rec, pool, seq) for seq, rec in enumerate(trace.records)]
    bucket = bucket_of(repetition_rate(trace.hashes()))
    workload = Workload(trace.user_id, bucket, seed, queries)
    if workload.fallback_fraction:
        log.info("user %s: %.2f%% of queries mapped by fallback", trace.user_id, 100 * workload.fallback_fraction)
    return workload


def write_manifest(workload: Workload, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for q in workload.queries:
            writer.writerow([q.seq, q.source_query_id, q.map_case.value, q.template_id, q.instance_id])


def read_manifest(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_playback(workload: Workload, pool: PoolIndex, path: str | Path) -> None:
    """Concatenate the mapped SQL back to back, one ``-- seq:N`` header per query."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for q in workload.queries:
            sql = pool.instances[q.instance_id].sql_text.strip()
            if not sql:
                raise MappingError(f"no SQL text for instance {q.instance_id}; load the pool from its directory")
            if not sql.endswith(";"):
                sql += ";"
            fh.write(f"-- seq:{q.seq}\n{sql}\n")


def workloads_from(traces: Iterable[UserTrace], pool: PoolIndex, seed: int) -> list[Workload]:
    return [generate_workload(t, pool, seed) for t in traces]
