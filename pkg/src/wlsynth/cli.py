"""Command-line entry point: ``wlsynth {synth,index,prefilter,generate,report,plot}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .pipeline import RunConfig, StageError, load_pool_stage, run_generate, run_prefilter_stage, run_report
from .pool import DEFAULT_TEMPLATE_RULE, quarantine, validate_pool, write_index
from .prefilter import DEFAULT_K
from .sampler import DEFAULT_PER_BUCKET
from .synth import SynthSpec, SynthSpecError, synthesize_to

LOG_ENV = "REDBENCH_LOG"


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _pair(text: str) -> tuple[int, int]:
    lo, hi = (int(x) for x in text.split(","))
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wlsynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic trace CSV")
    p.add_argument("--out", required=True, help="trace CSV to write")
    p.add_argument("--users", type=int, default=30)
    p.add_argument("--queries-per-user", type=int, default=100)
    p.add_argument("--rates", type=_floats, default=[0.5], help="comma-separated repetition rates, cycled over users")
    p.add_argument("--join-range", type=_pair, default=(1, 4), help="min,max joins")
    p.add_argument("--tables", type=int, default=8, help="size of the table universe")
    p.add_argument("--cached-fraction", type=float, default=0.0)
    p.add_argument("--non-select-fraction", type=float, default=0.0)
    p.add_argument("--nonconforming-fraction", type=float, default=0.0)
    p.add_argument("--scanset-reuse", type=float, default=0.3)
    p.add_argument("--weeks", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("index", help="index a SQL query pool")
    p.add_argument("--pool", required=True, help="pool directory")
    p.add_argument("--template-rule", default=DEFAULT_TEMPLATE_RULE)
    p.add_argument("--out", required=True, help="index CSV to write")
    p.add_argument("--quarantine", action="store_true", help="drop templates with inconsistent join counts")

    p = sub.add_parser("prefilter", help="apply query/user filters and the busiest-week cut")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--busiest-week-k", type=int, default=DEFAULT_K)

    p = sub.add_parser("generate", help="run the whole pipeline")
    p.add_argument("--trace", required=True)
    p.add_argument("--pool", required=True, help="pool directory or index CSV")
    p.add_argument("--template-rule", default=DEFAULT_TEMPLATE_RULE)
    p.add_argument("--busiest-week-k", type=int, default=DEFAULT_K)
    p.add_argument("--users-per-bucket", type=int, default=DEFAULT_PER_BUCKET)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quarantine", action="store_true")
    p.add_argument("--emit-sql", action="store_true", help="write back-to-back SQL playback files")
    p.add_argument("--emit-plot-data", action="store_true", help="write per-user join series CSVs")

    p = sub.add_parser("report", help="recompute fidelity metrics from generated manifests")
    p.add_argument("--trace", required=True)
    p.add_argument("--pool", required=True, help="pool directory or index CSV")
    p.add_argument("--workloads", required=True, help="directory of workload manifests")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--template-rule", default=DEFAULT_TEMPLATE_RULE)
    p.add_argument("--busiest-week-k", type=int, default=DEFAULT_K)
    p.add_argument("--emit-plot-data", action="store_true")

    p = sub.add_parser("plot", help="render a join series CSV (needs matplotlib)")
    p.add_argument("--series", required=True)
    p.add_argument("--out", required=True, help="image file to write")
    return parser


def _plot(series: str, out: str) -> None:
    import csv

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with open(series, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    seq = [int(r["seq"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(seq, [float(r["input_norm_joins"]) for r in rows], label="trace")
    ax.plot(seq, [float(r["output_norm_joins"]) for r in rows], label="workload", alpha=0.8)
    ax.set_xlabel("query")
    ax.set_ylabel("normalized joins")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)


def run(args: argparse.Namespace) -> int:
    if args.command == "synth":
        spec = SynthSpec(
            users=args.users,
            queries_per_user=args.queries_per_user,
            target_rate=tuple(args.rates),
            join_range=args.join_range,
            table_universe=args.tables,
            cached_fraction=args.cached_fraction,
            non_select_fraction=args.non_select_fraction,
            nonconforming_fraction=args.nonconforming_fraction,
            scanset_reuse=args.scanset_reuse,
            week_span=args.weeks,
            seed=args.seed,
        )
        try:
            records = synthesize_to(spec, args.out)
        except SynthSpecError as exc:
            raise StageError("synth", str(exc)) from exc
        print(f"wrote {len(records)} records for {args.users} users to {args.out}")
    elif args.command == "index":
        pool = load_pool_stage(args.pool, args.template_rule)
        validation = validate_pool(pool)
        for line in validation.describe():
            print(f"warning: {line}", file=sys.stderr)
        if args.quarantine:
            pool = quarantine(pool, validation)
        write_index(pool, args.out)
        print(f"indexed {len(pool)} instances in {len(pool.templates)} templates to {args.out}")
    elif args.command == "prefilter":
        survivors = run_prefilter_stage(args.trace, args.out, args.busiest_week_k)
        print(f"{len(survivors)} users survive prefiltering")
    elif args.command == "generate":
        cfg = RunConfig(
            trace=args.trace,
            pool=args.pool,
            out=args.out,
            template_rule=args.template_rule,
            busiest_week_k=args.busiest_week_k,
            users_per_bucket=args.users_per_bucket,
            seed=args.seed,
            quarantine=args.quarantine,
            emit_sql=args.emit_sql,
            emit_plot_data=args.emit_plot_data,
        )
        summary = run_generate(cfg)
        for w in summary["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        print(f"wrote {summary['counts']['workloads']} workloads to {args.out}")
    elif args.command == "report":
        reports = run_report(
            args.trace, args.pool, args.workloads, args.out, args.template_rule, args.busiest_week_k, args.emit_plot_data
        )
        print(f"wrote fidelity for {len(reports)} workloads to {args.out}")
    elif args.command == "plot":
        _plot(args.series, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get(LOG_ENV, "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except StageError as exc:
        print(f"error {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
