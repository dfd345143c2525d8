import csv
import filecmp
import json
import subprocess
import sys

import pytest

from wlsynth.cli import main
from wlsynth.trace import TRACE_COLUMNS

from conftest import MINI_POOL


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def trace(tmp_path):
    path = tmp_path / "trace.csv"
    assert main(["synth", "--out", str(path), "--users", "20", "--queries-per-user", "40",
                 "--rates", "0.05,0.15,0.25,0.35,0.45,0.55,0.65,0.75,0.85,0.95",
                 "--join-range", "1,5", "--tables", "9", "--cached-fraction", "0.1", "--seed", "5"]) == 0
    return path


def test_index(tmp_path, capsys):
    assert main(["index", "--pool", str(MINI_POOL), "--out", str(tmp_path / "index.csv")]) == 0
    index = rows(tmp_path / "index.csv")
    assert {r["template_id"] for r in index} == {"1", "2", "3", "4", "5"}
    assert "5 templates" in capsys.readouterr().out


def test_synth_rate_lands_in_bucket(tmp_path):
    path = tmp_path / "t.csv"
    assert main(["synth", "--out", str(path), "--users", "1", "--queries-per-user", "20", "--rates", "0.85"]) == 0
    assert main(["generate", "--trace", str(path), "--pool", str(MINI_POOL), "--out", str(tmp_path / "o")]) == 0
    [row] = rows(tmp_path / "o" / "fidelity.csv")
    assert row["bucket"] == "8" and float(row["input_rate"]) == 0.85


def test_prefilter_stage(trace, tmp_path):
    assert main(["prefilter", "--trace", str(trace), "--out", str(tmp_path / "p")]) == 0
    kept = rows(tmp_path / "p" / "prefiltered.csv")
    assert len(kept) == 20 * 40
    assert list(kept[0]) == list(TRACE_COLUMNS)
    stats = json.loads((tmp_path / "p" / "prefilter_stats.json").read_text())
    assert stats


def test_generate_layout(trace, tmp_path):
    out = tmp_path / "o"
    assert main(["generate", "--trace", str(trace), "--pool", str(MINI_POOL), "--out", str(out),
                 "--emit-sql", "--emit-plot-data"]) == 0
    workloads = sorted(p.name for p in (out / "workloads").iterdir())
    assert len(workloads) == len(rows(out / "selection.csv")) == len(rows(out / "fidelity.csv")) == 20
    assert sorted(p.name for p in (out / "sql").iterdir()) == [w[:-4] + ".sql" for w in workloads]
    assert len(list((out / "series").iterdir())) == 20
    for name in ("index.csv", "pool_validation.json", "prefilter_stats.csv", "prefiltered.csv",
                 "summary.json", "fleet_metrics.json", "run.json"):
        assert (out / name).is_file(), name
    fleet = json.loads((out / "fleet_metrics.json").read_text())
    assert set(fleet) >= {"select_share", "overall_fallback_fraction", "table_coverage_shortfall"}
    for r in rows(out / "fidelity.csv"):
        assert r["output_rate_by_hash"] == r["input_rate"]


def test_staged_equals_pipeline(trace, tmp_path):
    full, staged = tmp_path / "full", tmp_path / "staged"
    assert main(["generate", "--trace", str(trace), "--pool", str(MINI_POOL), "--out", str(full), "--seed", "9"]) == 0
    assert main(["index", "--pool", str(MINI_POOL), "--out", str(tmp_path / "index.csv")]) == 0
    assert main(["prefilter", "--trace", str(trace), "--out", str(staged)]) == 0
    assert main(["generate", "--trace", str(staged / "prefiltered.csv"), "--pool", str(tmp_path / "index.csv"),
                 "--out", str(staged), "--seed", "9"]) == 0
    assert main(["report", "--trace", str(trace), "--pool", str(tmp_path / "index.csv"),
                 "--workloads", str(staged / "workloads"), "--out", str(tmp_path / "rep")]) == 0
    for name in ("selection.csv", "fidelity.csv", "prefiltered.csv"):
        assert filecmp.cmp(full / name, staged / name, shallow=False), name
    match, mismatch, errors = filecmp.cmpfiles(full / "workloads", staged / "workloads",
                                               [p.name for p in (full / "workloads").iterdir()], shallow=False)
    assert not mismatch and not errors and len(match) == 20
    assert filecmp.cmp(full / "fidelity.csv", tmp_path / "rep" / "fidelity.csv", shallow=False)


def test_report_row_count(trace, tmp_path):
    out = tmp_path / "o"
    main(["generate", "--trace", str(trace), "--pool", str(MINI_POOL), "--out", str(out), "--users-per-bucket", "1"])
    assert main(["report", "--trace", str(trace), "--pool", str(MINI_POOL), "--workloads", str(out / "workloads"),
                 "--out", str(tmp_path / "r")]) == 0
    assert len(rows(tmp_path / "r" / "fidelity.csv")) == len(list((out / "workloads").iterdir())) == 10


def test_empty_trace_fails(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text(",".join(TRACE_COLUMNS) + "\n")
    assert main(["generate", "--trace", str(path), "--pool", str(MINI_POOL), "--out", str(tmp_path / "o")]) != 0
    assert "no users survive prefiltering" in capsys.readouterr().err


def test_bad_trace_names_stage(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("user_id,query_id\nu,1\n")
    assert main(["generate", "--trace", str(path), "--pool", str(MINI_POOL), "--out", str(tmp_path / "o")]) == 1
    assert "[parse]" in capsys.readouterr().err


def test_inconsistent_pool_needs_quarantine(trace, tmp_path, capsys):
    pool = tmp_path / "pool"
    pool.mkdir()
    for f in MINI_POOL.iterdir():
        (pool / f.name).write_text(f.read_text())
    (pool / "4c.sql").write_text("SELECT * FROM title t, movie_info mi, cast_info ci, name n, kind_type kt")
    args = ["generate", "--trace", str(trace), "--pool", str(pool), "--out", str(tmp_path / "o")]
    assert main(args) == 1
    assert "--quarantine" in capsys.readouterr().err
    assert main(args + ["--quarantine"]) == 0
    info = json.loads((tmp_path / "o" / "pool_validation.json").read_text())
    assert info["quarantined"] == ["4"]


def test_infeasible_synth(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "t.csv"), "--queries-per-user", "10", "--rates", "1.0"]) == 1
    assert "[synth]" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "wlsynth", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "generate" in proc.stdout
