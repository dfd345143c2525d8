import random
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given
from hypothesis import strategies as st

from wlsynth.prefilter import (
    BEYOND_K,
    CONSTANT_JOINS,
    EMPTY_USER,
    JOINS_MISMATCH,
    NO_JOINS,
    NOT_SELECT,
    RESULT_CACHED,
    NoWeekWindowError,
    WeekWindow,
    busiest_week,
    filter_queries,
    filter_users,
    run_prefilter,
    select_share,
    week_window_of,
    write_stats,
)
from wlsynth.trace import QueryType, UserTrace

from conftest import MONDAY, rec


def keep(r):
    """One-pass brute-force predicate."""
    return (
        r.query_type == QueryType.SELECT
        and not r.was_cached
        and r.num_joins >= 1
        and r.num_joins == len(r.read_table_ids) - 1
    )


records_st = st.builds(
    rec,
    tables=st.frozensets(st.sampled_from("abcdef"), max_size=5),
    joins=st.integers(0, 5),
    qtype=st.sampled_from(list(QueryType)),
    cached=st.booleans(),
)


class TestFilterQueries:
    def test_insert_removed_by_rule_one(self):
        kept, stats = filter_queries([rec(qtype=QueryType.INSERT)])
        assert kept == [] and stats.removed_records[NOT_SELECT] == 1

    def test_cached_removed_by_rule_two(self):
        kept, stats = filter_queries([rec(cached=True)])
        assert kept == [] and stats.removed_records[RESULT_CACHED] == 1

    def test_no_joins_removed(self):
        kept, stats = filter_queries([rec(tables=("a",), joins=0)])
        assert kept == [] and stats.removed_records[NO_JOINS] == 1

    def test_rule_four_arithmetic(self):
        bad = rec(tables="abc", joins=3)
        good = rec(tables="abc", joins=2)
        assert [keep(bad), keep(good)] == [False, True]
        kept, stats = filter_queries([bad, good])
        assert kept == [good]
        assert stats.removed_records[JOINS_MISMATCH] == 1

    def test_attribution_order(self):
        # violates every rule; attributed to the first
        _, stats = filter_queries([rec(tables="a", joins=0, qtype=QueryType.UPDATE, cached=True)])
        assert stats.removed_records[NOT_SELECT] == 1
        assert sum(stats.removed_records.values()) == 1

    @given(st.lists(records_st, max_size=40))
    def test_matches_bruteforce_and_idempotent(self, records):
        kept, stats = filter_queries(records)
        assert kept == [r for r in records if keep(r)]
        assert stats.is_conserved()
        again, _ = filter_queries(kept)
        assert again == kept
        for r in kept:
            assert r.num_joins == len(r.read_table_ids) - 1 >= 1


class TestFilterUsers:
    def test_constant_joins_dropped(self):
        trace = UserTrace("u", [rec(tables="abc"), rec(tables="bcd")])
        kept, stats = filter_users([trace])
        assert kept == [] and stats.removed_users[CONSTANT_JOINS] == 1

    def test_varied_joins_kept(self):
        trace = UserTrace("u", [rec(tables="ab"), rec(tables="ac"), rec(tables="abcde")])
        kept, _ = filter_users([trace])
        assert kept == [trace]

    def test_only_cached_query_dropped_as_empty(self):
        raw = [UserTrace("u1", [rec(cached=True, user="u1")]), UserTrace("u2", [rec(user="u2"), rec(tables="abc", user="u2")])]
        filtered = [UserTrace(t.user_id, filter_queries(t.records)[0]) for t in raw]
        kept, stats = filter_users(filtered)
        # brute force over the whole pipeline
        expected = []
        for t in raw:
            rs = [r for r in t.records if keep(r)]
            if rs and min(r.num_joins for r in rs) != max(r.num_joins for r in rs):
                expected.append(t.user_id)
        assert [t.user_id for t in kept] == expected == ["u2"]
        assert stats.removed_users[EMPTY_USER] == 1
        assert stats.is_conserved()


def brute_force_busiest(records, k):
    """Enumerate every Monday 08:00 from the first record's week onwards."""
    first = min(r.arrival_timestamp for r in records)
    last = max(r.arrival_timestamp for r in records)
    monday = datetime.combine(first.date() - timedelta(days=first.weekday()), datetime.min.time(), timezone.utc)
    start = monday + timedelta(hours=8)
    best, best_count = None, 0
    while start <= last:
        end = start + timedelta(days=4, hours=9)
        inside = sorted(
            (r for r in records if start <= r.arrival_timestamp < end),
            key=lambda r: (r.arrival_timestamp, int(r.query_id)),
        )
        if len(inside) > best_count:
            best, best_count = inside, len(inside)
        start += timedelta(days=7)
    return best[:k] if best else None


class TestBusiestWeek:
    def test_window_shape(self):
        w = week_window_of(MONDAY + timedelta(days=2))
        assert w == WeekWindow(MONDAY)
        assert w.end - w.start == timedelta(days=4, hours=9)
        assert w.start.weekday() == 0 and w.start.hour == 8

    @pytest.mark.parametrize(
        "offset, inside",
        [
            (timedelta(0), True),
            (timedelta(seconds=-1), False),
            (timedelta(days=4, hours=9), False),
            (timedelta(days=4, hours=8, minutes=59, seconds=59), True),
            (timedelta(days=5, hours=2), False),
            (timedelta(days=6, hours=4), False),
        ],
    )
    def test_boundaries(self, offset, inside):
        assert (week_window_of(MONDAY + offset) is not None) is inside

    def test_busier_second_window(self):
        week1 = [rec(qid=i, ts=MONDAY + timedelta(hours=i)) for i in range(3)]
        week2 = [rec(qid=10 + i, ts=MONDAY + timedelta(days=7, hours=i)) for i in range(5)]
        out = busiest_week(UserTrace("u", week1 + week2), 1000)
        assert out.records == week2
        assert out.records == brute_force_busiest(week1 + week2, 1000)

    def test_tie_goes_to_earliest(self):
        week1 = [rec(qid=i, ts=MONDAY + timedelta(hours=i)) for i in range(5)]
        week2 = [rec(qid=10 + i, ts=MONDAY + timedelta(days=7, hours=i)) for i in range(5)]
        out = busiest_week(UserTrace("u", week2 + week1), 1000)
        assert out.records == week1 == brute_force_busiest(week1 + week2, 1000)

    def test_truncates_to_first_k(self):
        week = [rec(qid=i, ts=MONDAY + timedelta(hours=5 - i)) for i in range(5)]
        out = busiest_week(UserTrace("u", week), 2)
        assert [r.query_id for r in out.records] == ["4", "3"]

    def test_weekend_only(self):
        saturday = MONDAY + timedelta(days=5)
        with pytest.raises(NoWeekWindowError):
            busiest_week(UserTrace("u", [rec(ts=saturday)]), 10)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_against_bruteforce(self, seed):
        rng = random.Random(seed)
        base = MONDAY - timedelta(hours=8)
        records = [
            rec(qid=i, ts=base + timedelta(seconds=rng.randrange(8 * 7 * 86400)))
            for i in range(rng.randrange(20, 200))
        ]
        for k in (1, 7, 1000):
            assert busiest_week(UserTrace("u", records), k).records == brute_force_busiest(records, k)


class TestRunPrefilter:
    def test_stats_conserved_and_k_applied(self):
        recs = []
        for i in range(6):
            recs.append(rec(tables="ab" if i % 2 else "abc", qid=i, user="u1", ts=MONDAY + timedelta(hours=i)))
        recs.append(rec(qid=100, user="u1", cached=True))
        recs.append(rec(qid=101, user="u1", ts=MONDAY + timedelta(days=5)))
        recs.append(rec(qid=200, user="u2"))
        recs.append(rec(qid=201, user="u3", ts=MONDAY - timedelta(days=1)))
        traces = [UserTrace(u, [r for r in recs if r.user_id == u]) for u in ("u1", "u2", "u3")]
        survivors, stats = run_prefilter(traces, k=4)
        assert [t.user_id for t in survivors] == ["u1"]
        assert len(survivors[0]) == 4
        assert all(s.is_conserved() for s in stats)
        q, w, u = stats
        assert q.records_in == len(recs)
        assert w.removed_records[BEYOND_K] == 2
        assert u.removed_users[CONSTANT_JOINS] == 1  # u2
        assert w.removed_users["no_week_window"] == 1  # u3

    def test_idempotent(self):
        recs = [rec(tables="ab" if i % 3 else "abcd", qid=i, ts=MONDAY + timedelta(days=i % 9, hours=i % 11)) for i in range(60)]
        once, _ = run_prefilter([UserTrace("u1", recs)], k=10)
        twice, _ = run_prefilter(once, k=10)
        assert [t.records for t in once] == [t.records for t in twice]

    def test_stats_file(self, tmp_path):
        _, stats = run_prefilter([UserTrace("u1", [rec(cached=True)])])
        write_stats(stats, tmp_path / "s.csv", tmp_path / "s.json")
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "stage,rule,unit,removed_count"
        assert "queries,result_cached,records,1" in lines
        assert "users,no_surviving_queries,users,1" in lines


def test_select_share():
    recs = [rec(), rec(qtype=QueryType.INSERT), rec(cached=True), rec(qtype=QueryType.OTHER)]
    assert select_share(recs) == 0.5
    assert select_share([]) == 0.0
