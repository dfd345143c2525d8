"""End-to-end generation: parse, prefilter, select users, map, report."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from .fidelity import (
    FidelityReport,
    aggregate_reports,
    build_report,
    fleet_metrics,
    workload_from_manifest,
    write_fidelity,
    write_series,
)
from .mapper import generate_workload, read_manifest, write_manifest, write_playback
from .pool import DEFAULT_TEMPLATE_RULE, PoolIndex, load_pool, quarantine, validate_pool, write_index
from .prefilter import DEFAULT_K, run_prefilter, write_stats
from .sampler import DEFAULT_PER_BUCKET, bucket_of, bucket_warnings, profile, select_users, write_selection
from .trace import QueryRecord, TraceError, UserTrace, group_by_user, query_id_key, read_records, repetition_rate, write_trace

log = logging.getLogger(__name__)

SERIES_NOTE = "input normalized by the user's min/max joins; output by the pool's min/max joins"


class StageError(Exception):
    def __init__(self, stage: str, message: str) -> None:
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class RunConfig:
    trace: str
    pool: str
    out: str
    template_rule: str = DEFAULT_TEMPLATE_RULE
    busiest_week_k: int = DEFAULT_K
    users_per_bucket: int = DEFAULT_PER_BUCKET
    seed: int = 0
    quarantine: bool = False
    emit_sql: bool = False
    emit_plot_data: bool = False

    def validate(self) -> None:
        if self.busiest_week_k < 1:
            raise StageError("config", "--busiest-week-k must be at least 1")
        if self.users_per_bucket < 1:
            raise StageError("config", "--users-per-bucket must be at least 1")


def safe_name(user_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", user_id)


def _dump_json(obj, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_trace(path: str) -> list[QueryRecord]:
    try:
        return read_records(path)
    except (OSError, ValueError, TraceError) as exc:
        raise StageError("parse", str(exc)) from exc


def load_pool_stage(path: str, template_rule: str) -> PoolIndex:
    try:
        return load_pool(path, template_rule)
    except Exception as exc:
        raise StageError("index", str(exc)) from exc


def prepare_pool(path: str, template_rule: str, use_quarantine: bool) -> tuple[PoolIndex, dict]:
    pool = load_pool_stage(path, template_rule)
    validation = validate_pool(pool)
    info = {
        "violations": validation.violations,
        "degenerate": validation.degenerate,
        "instance_counts": validation.instance_counts,
        "quarantined": [],
    }
    if validation.violations:
        if not use_quarantine:
            raise StageError("index", "pool unusable: " + "; ".join(validation.describe()) + " (use --quarantine)")
        info["quarantined"] = sorted(validation.violations)
        pool = quarantine(pool, validation)
    return pool, info


def report_sort_key(report: FidelityReport) -> tuple:
    return (report.bucket, query_id_key(report.user_id))


def run_generate(cfg: RunConfig) -> dict:
    cfg.validate()
    out = Path(cfg.out)
    records = load_trace(cfg.trace)
    pool, pool_info = prepare_pool(cfg.pool, cfg.template_rule, cfg.quarantine)

    traces = group_by_user(records)
    survivors, stats = run_prefilter(traces, cfg.busiest_week_k)
    if not survivors:
        raise StageError("prefilter", "no users survive prefiltering")

    profiles = [profile(t) for t in survivors]
    selected = select_users(profiles, cfg.users_per_bucket)
    warnings = bucket_warnings(profiles, cfg.users_per_bucket)
    for w in warnings:
        log.warning("%s", w)

    out.mkdir(parents=True, exist_ok=True)
    (out / "workloads").mkdir(exist_ok=True)
    write_index(pool, out / "index.csv")
    _dump_json(pool_info, out / "pool_validation.json")
    write_stats(stats, out / "prefilter_stats.csv", out / "prefilter_stats.json")
    write_trace(survivors, out / "prefiltered.csv")
    write_selection(selected, out / "selection.csv")

    by_user = {t.user_id: t for t in survivors}
    reports = []
    for sel in selected:
        trace = by_user[sel.profile.user_id]
        try:
            workload = generate_workload(trace, pool, cfg.seed)
        except Exception as exc:
            raise StageError("map", f"user {trace.user_id}: {exc}") from exc
        name = safe_name(trace.user_id)
        write_manifest(workload, out / "workloads" / f"{name}.csv")
        if cfg.emit_sql:
            (out / "sql").mkdir(exist_ok=True)
            try:
                write_playback(workload, pool, out / "sql" / f"{name}.sql")
            except Exception as exc:
                raise StageError("map", str(exc)) from exc
        reports.append(build_report(trace, workload, pool))

    reports.sort(key=report_sort_key)
    _write_reports(reports, out, cfg.emit_plot_data)
    fleet = fleet_metrics(records, survivors, pool, reports)
    _dump_json(fleet, out / "fleet_metrics.json")

    run = {
        "tool": "wlsynth",
        "version": __version__,
        "config": {k: v for k, v in asdict(cfg).items() if k != "out"},
        "counts": {
            "trace_records": len(records),
            "trace_users": len(traces),
            "surviving_users": len(survivors),
            "selected_users": len(selected),
            "workloads": len(reports),
            "pool_templates": len(pool.templates),
            "pool_instances": len(pool),
        },
        "warnings": warnings,
        "series_normalization": SERIES_NOTE,
    }
    _dump_json(run, out / "run.json")
    return run


def _write_reports(reports: list[FidelityReport], out: Path, emit_plot_data: bool) -> None:
    write_fidelity(reports, out / "fidelity.csv")
    _dump_json(aggregate_reports(reports), out / "summary.json")
    if emit_plot_data:
        (out / "series").mkdir(exist_ok=True)
        for r in reports:
            write_series(r, out / "series" / f"series_{safe_name(r.user_id)}.csv")


def run_prefilter_stage(trace_path: str, out: str, k: int = DEFAULT_K) -> list[UserTrace]:
    records = load_trace(trace_path)
    survivors, stats = run_prefilter(group_by_user(records), k)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_trace(survivors, out_dir / "prefiltered.csv")
    write_stats(stats, out_dir / "prefilter_stats.csv", out_dir / "prefilter_stats.json")
    return survivors


def run_report(
    trace_path: str,
    pool_path: str,
    workloads_dir: str,
    out: str,
    template_rule: str = DEFAULT_TEMPLATE_RULE,
    k: int = DEFAULT_K,
    emit_plot_data: bool = False,
) -> list[FidelityReport]:
    """Recompute fidelity from manifests written by ``generate``.

    The trace may be raw or already prefiltered; prefiltering is idempotent.
    """
    records = load_trace(trace_path)
    survivors, _ = run_prefilter(group_by_user(records), k)
    pool, _ = prepare_pool(pool_path, template_rule, use_quarantine=True)
    owner = {r.query_id: t for t in survivors for r in t.records}
    reports = []
    for path in sorted(Path(workloads_dir).glob("*.csv")):
        rows = read_manifest(path)
        if not rows:
            continue
        trace = owner.get(rows[0]["source_query_id"])
        if trace is None:
            raise StageError("report", f"{path.name}: query {rows[0]['source_query_id']} not in the prefiltered trace")
        bucket = bucket_of(repetition_rate(trace.hashes()))
        try:
            workload = workload_from_manifest(rows, trace, bucket, seed=0)
            reports.append(build_report(trace, workload, pool))
        except Exception as exc:
            raise StageError("report", f"{path.name}: {exc}") from exc
    reports.sort(key=report_sort_key)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_reports(reports, out_dir, emit_plot_data)
    return reports
