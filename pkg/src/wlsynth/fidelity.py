"""How faithfully a generated workload preserves its source trace."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .mapper import MapCase, MappedQuery, Workload, normalized_joins
from .pool import PoolIndex
from .prefilter import select_share
from .trace import QueryRecord, UserTrace, hash_of, repetition_rate

FIDELITY_COLUMNS = (
    "user_id",
    "bucket",
    "length",
    "input_rate",
    "output_rate_by_hash",
    "output_rate_by_instance",
    "fallback_fraction",
    "distinct_scansets_in",
    "distinct_templates_out",
)
SERIES_COLUMNS = ("seq", "input_norm_joins", "output_norm_joins")


class IntegrityError(Exception):
    pass


@dataclass
class FidelityReport:
    user_id: str
    bucket: int
    length: int
    input_rate: float
    output_rate_by_hash: float
    output_rate_by_instance: float
    fallback_fraction: float
    input_join_series: list[tuple[int, float]]
    output_join_series: list[tuple[int, float]]
    distinct_scansets_in: int
    distinct_templates_out: int

    def row(self) -> list:
        return [
            self.user_id,
            self.bucket,
            self.length,
            repr(self.input_rate),
            repr(self.output_rate_by_hash),
            repr(self.output_rate_by_instance),
            repr(self.fallback_fraction),
            self.distinct_scansets_in,
            self.distinct_templates_out,
        ]


def build_report(trace: UserTrace, workload: Workload, pool: PoolIndex) -> FidelityReport:
    """Compare a trace with the workload generated from it.

    ``output_rate_by_hash`` counts a position as repeated only when an earlier
    position had the same source hash *and* was given the same instance, so it
    equals the input rate exactly when the mapping is hash-consistent.
    """
    if len(trace) != len(workload):
        raise IntegrityError(f"user {trace.user_id}: trace has {len(trace)} queries, workload {len(workload)}")
    for rec, q in zip(trace.records, workload.queries):
        if rec.query_id != q.source_query_id:
            raise IntegrityError(f"user {trace.user_id}: seq {q.seq} maps {q.source_query_id}, trace has {rec.query_id}")
    hashes = trace.hashes()
    instances = [q.instance_id for q in workload.queries]
    joins = [r.num_joins for r in trace.records]
    jmin, jmax = (min(joins), max(joins)) if joins else (0, 0)
    return FidelityReport(
        user_id=trace.user_id,
        bucket=workload.bucket,
        length=len(workload),
        input_rate=repetition_rate(hashes),
        output_rate_by_hash=repetition_rate(list(zip(hashes, instances))),
        output_rate_by_instance=repetition_rate(instances),
        fallback_fraction=workload.fallback_fraction,
        input_join_series=[(i, normalized_joins(j, jmin, jmax)) for i, j in enumerate(joins)],
        output_join_series=[(q.seq, pool.normalized_join(q.template_id)) for q in workload.queries],
        distinct_scansets_in=len({h.scanset for h in hashes}),
        distinct_templates_out=len({q.template_id for q in workload.queries}),
    )


def workload_from_manifest(rows: list[dict[str, str]], trace: UserTrace, bucket: int, seed: int) -> Workload:
    """Rebuild a :class:`Workload` from manifest rows and the trace they map."""
    if len(rows) != len(trace):
        raise IntegrityError(f"user {trace.user_id}: manifest has {len(rows)} rows, trace {len(trace)}")
    queries = [
        MappedQuery(int(row["seq"]), row["source_query_id"], hash_of(rec), row["instance_id"], row["template_id"], MapCase(row["map_case"]))
        for row, rec in zip(rows, trace.records)
    ]
    return Workload(trace.user_id, bucket, seed, queries)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values)


def aggregate_reports(reports: Iterable[FidelityReport]) -> dict:
    """Per-bucket means plus the length-weighted overall fallback fraction."""
    reports = list(reports)
    if not reports:
        return {}
    buckets: dict[int, list[FidelityReport]] = {}
    for r in reports:
        buckets.setdefault(r.bucket, []).append(r)
    per_bucket = {}
    for b in sorted(buckets):
        rs = buckets[b]
        per_bucket[str(b)] = {
            "workloads": len(rs),
            "input_rate": _mean([r.input_rate for r in rs]),
            "output_rate_by_hash": _mean([r.output_rate_by_hash for r in rs]),
            "output_rate_by_instance": _mean([r.output_rate_by_instance for r in rs]),
            "fallback_fraction": _mean([r.fallback_fraction for r in rs]),
        }
    total = sum(r.length for r in reports)
    fallback_queries = sum(r.fallback_fraction * r.length for r in reports)
    return {
        "workloads": len(reports),
        "queries": total,
        "overall_fallback_fraction": fallback_queries / total if total else 0.0,
        "buckets": per_bucket,
    }


def coverage_shortfall(traces: Iterable[UserTrace], pool: PoolIndex) -> float:
    """Fraction of users reading more distinct tables than the pool has."""
    traces = list(traces)
    if not traces:
        return 0.0
    available = len(pool.tables)
    short = sum(1 for t in traces if len({tid for r in t.records for tid in r.read_table_ids}) > available)
    return short / len(traces)


def fleet_metrics(
    raw_records: Iterable[QueryRecord],
    survivors: Iterable[UserTrace],
    pool: PoolIndex,
    reports: Iterable[FidelityReport],
) -> dict:
    summary = aggregate_reports(reports)
    return {
        "select_share": select_share(raw_records),
        "overall_fallback_fraction": summary.get("overall_fallback_fraction", 0.0),
        "table_coverage_shortfall": coverage_shortfall(survivors, pool),
        "pool_tables": len(pool.tables),
    }


def write_fidelity(reports: Iterable[FidelityReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIDELITY_COLUMNS)
        for r in reports:
            writer.writerow(r.row())


def write_series(report: FidelityReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_COLUMNS)
        for (seq, a), (_, b) in zip(report.input_join_series, report.output_join_series):
            writer.writerow([seq, repr(a), repr(b)])
