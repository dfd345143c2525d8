from __future__ import annotations

import itertools
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from wlsynth.pool import PoolIndex, QueryInstance
from wlsynth.trace import QueryRecord, QueryType, Scanset

FIXTURES = Path(__file__).parent / "fixtures"
MINI_POOL = FIXTURES / "mini_pool"

# Monday 2024-03-04 08:00 UTC
MONDAY = datetime(2024, 3, 4, 8, 0, tzinfo=timezone.utc)

_qids = itertools.count(1)


def rec(
    tables=("a", "b"),
    joins=None,
    scans=None,
    fp="A",
    user="u1",
    qid=None,
    ts=None,
    qtype=QueryType.SELECT,
    cached=False,
) -> QueryRecord:
    tables = frozenset(tables)
    return QueryRecord(
        user_id=user,
        query_id=str(next(_qids)) if qid is None else str(qid),
        arrival_timestamp=MONDAY if ts is None else ts,
        query_type=qtype,
        was_cached=cached,
        num_joins=len(tables) - 1 if joins is None else joins,
        num_scans=len(tables) if scans is None else scans,
        read_table_ids=tables,
        feature_fingerprint=fp,
    )


def seq_records(specs, user="u1", start=MONDAY, step=timedelta(minutes=1)) -> list[QueryRecord]:
    """Records at increasing timestamps from (tables, fp) pairs."""
    out = []
    for i, (tables, fp) in enumerate(specs):
        out.append(rec(tables=tables, fp=fp, user=user, qid=f"{i + 1}", ts=start + i * step))
    return out


def make_pool(layout: dict[str, tuple[int, int]]) -> PoolIndex:
    """In-memory pool from {template_id: (join_count, n_instances)}."""
    instances = []
    for tid, (joins, n) in layout.items():
        tables = Scanset.of(f"{tid}_t{k}" for k in range(joins + 1))
        for i in range(n):
            instances.append(QueryInstance(f"{tid}/{i:04d}.sql", tid, tables, joins, f"SELECT {i} /* {tid} */"))
    return PoolIndex(instances)


@pytest.fixture
def mini_pool_dir() -> Path:
    return MINI_POOL


_criteria: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria.setdefault(marker.args[0], []).append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcomes in _criteria.items():
        status = "PASS" if all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")
