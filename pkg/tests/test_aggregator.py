import io
from collections import defaultdict
from datetime import date, datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from wssci.aggregator import (
    EXACT,
    SKETCH,
    CounterError,
    ModeMismatchError,
    TimeSpan,
    WsscipCounter,
    classify_timespan,
    count_partitioned,
    count_wsscipphg,
    identify_wssci,
    merge,
    read_checkpoint,
    read_checkpoint_counts,
    weekly_total,
    write_checkpoint,
)
from wssci.geogrid import decode_half_grid, encode_half_grid
from wssci.ingest import LocationFix, SearchLogRecord, parse_tz
from wssci.patterns import expand_default_patterns

JST = parse_tz("+09:00")
PATTERNS = expand_default_patterns()
G1, G2 = "644142681", "644142682"


def ts(local: str, tz=JST) -> int:
    return int(datetime.fromisoformat(local).replace(tzinfo=tz).timestamp())


def fix(user, local, grid, tz=JST):
    lat, lon = decode_half_grid(grid).center
    return LocationFix(user, ts(local, tz), lat, lon)


@pytest.mark.parametrize(
    "clock, span",
    [
        ("08:00:00", TimeSpan.DAY),
        ("15:59:59", TimeSpan.DAY),
        ("16:00:00", TimeSpan.EVENING),
        ("23:59:59", TimeSpan.EVENING),
        ("00:00:00", TimeSpan.NIGHT),
        ("07:59:59", TimeSpan.NIGHT),
    ],
)
def test_classify_timespan_boundaries(clock, span):
    assert classify_timespan(ts(f"2020-02-14T{clock}"), JST) is span


def test_identify_same_day():
    recs = [SearchLogRecord("A", ts("2020-02-14T12:00:00"), "Cough CORONA")]
    assert identify_wssci(recs, PATTERNS) == {("A", date(2020, 2, 14))}


def test_identify_window_expansion():
    recs = [SearchLogRecord("A", ts("2020-02-14T12:00:00"), "cough corona")]
    got = identify_wssci(recs, PATTERNS, window_days=2)
    assert got == {("A", date(2020, 2, d)) for d in (14, 15, 16)}


def test_identify_non_matching():
    recs = [SearchLogRecord("B", ts("2020-02-14T12:00:00"), "weather")]
    assert identify_wssci(recs, PATTERNS) == set()


def test_identify_uses_local_date():
    # 23:30 UTC on the 13th is 08:30 on the 14th in +09:00
    recs = [SearchLogRecord("A", int(datetime(2020, 2, 13, 23, 30, tzinfo=timezone.utc).timestamp()), "cough corona")]
    assert identify_wssci(recs, PATTERNS) == {("A", date(2020, 2, 14))}


def test_distinct_within_cell():
    wssci = {("A", date(2020, 2, 14))}
    fixes = [fix("A", f"2020-02-14T09:{m:02d}:00", G1) for m in (0, 10, 20)]
    c = count_wsscipphg(wssci, fixes)
    assert c.count(G1, date(2020, 2, 14), TimeSpan.DAY) == 1
    assert c.count(G1, date(2020, 2, 14), TimeSpan.WHOLE) == 1
    assert len(c) == 2


def brute_force(wssci, fixes, tz=JST):
    cells = defaultdict(set)
    for f in fixes:
        t = datetime.fromtimestamp(f.timestamp, tz)
        if (f.user, t.date()) not in wssci:
            continue
        g = encode_half_grid(f.lat, f.lon)
        span = ["night", "day", "evening"][t.hour // 8]
        cells[(g, t.date(), span)].add(f.user)
        cells[(g, t.date(), "whole")].add(f.user)
    return {(g, d, TimeSpan(s)): len(u) for (g, d, s), u in cells.items()}


def test_two_grids_same_day():
    wssci = {("A", date(2020, 2, 14))}
    fixes = [fix("A", "2020-02-14T09:00:00", G1), fix("A", "2020-02-14T17:00:00", G2)]
    c = count_wsscipphg(wssci, fixes)
    assert c.counts() == brute_force(wssci, fixes)
    assert c.count(G1, date(2020, 2, 14), TimeSpan.WHOLE) == 1
    assert c.count(G2, date(2020, 2, 14), TimeSpan.WHOLE) == 1


def test_non_wssci_fixes_ignored():
    c = count_wsscipphg({("A", date(2020, 2, 14))}, [fix("B", "2020-02-14T09:00:00", G1)])
    assert len(c) == 0


# random event streams ------------------------------------------------------

GRIDS = [G1, G2, "644142683", "644142684", "644142671", "533935992"]
USERS = ["u1", "u2", "u3", "u4"]
DAYS = [date(2020, 2, 14) + timedelta(days=k) for k in range(4)]

fix_st = st.builds(
    lambda u, g, d, sec: fix(u, (datetime.combine(d, datetime.min.time()) + timedelta(seconds=sec)).isoformat(), g),
    st.sampled_from(USERS),
    st.sampled_from(GRIDS),
    st.sampled_from(DAYS),
    st.integers(0, 86399),
)
wssci_st = st.sets(st.tuples(st.sampled_from(USERS), st.sampled_from(DAYS)))


@given(wssci_st, st.lists(fix_st, max_size=30))
def test_count_matches_brute_force(wssci, fixes):
    assert count_wsscipphg(wssci, fixes).counts() == brute_force(wssci, fixes)


@given(wssci_st, st.lists(fix_st, max_size=30))
def test_span_partition(wssci, fixes):
    counts = count_wsscipphg(wssci, fixes).counts()
    for (g, d, s), whole in counts.items():
        if s is not TimeSpan.WHOLE:
            continue
        parts = [counts.get((g, d, p), 0) for p in (TimeSpan.DAY, TimeSpan.EVENING, TimeSpan.NIGHT)]
        assert max(parts) <= whole <= sum(parts)


@given(wssci_st, st.lists(fix_st, min_size=1, max_size=20), st.data())
def test_duplicates_do_not_change_counts(wssci, fixes, data):
    dup = data.draw(st.sampled_from(fixes))
    assert count_wsscipphg(wssci, fixes + [dup]).counts() == count_wsscipphg(wssci, fixes).counts()


@given(st.lists(fix_st, max_size=20), st.lists(st.tuples(st.sampled_from(USERS), st.sampled_from(DAYS)), max_size=5))
def test_window_monotonicity(fixes, hits):
    recs = [SearchLogRecord(u, ts(f"{d.isoformat()}T12:00:00"), "corona cough") for u, d in hits]
    prev = None
    for w in range(4):
        counts = count_wsscipphg(identify_wssci(recs, PATTERNS, w), fixes).counts()
        if prev is not None:
            assert all(counts.get(k, 0) >= n for k, n in prev.items())
        prev = counts


@given(st.lists(fix_st, max_size=20), st.integers(-12, 12))
def test_timezone_shift_invariance(fixes, hours):
    wssci = {(u, d) for u in USERS for d in DAYS[::2]}
    base = count_wsscipphg(wssci, fixes, JST).counts()
    delta = timedelta(hours=hours)
    tz2 = timezone(timedelta(hours=9) + delta)
    shifted = [LocationFix(f.user, f.timestamp - int(delta.total_seconds()), f.lat, f.lon) for f in fixes]
    assert count_wsscipphg(wssci, shifted, tz2).counts() == base


counter_st = st.builds(
    lambda wssci, fixes: count_wsscipphg(wssci, fixes), wssci_st, st.lists(fix_st, max_size=12)
)


@settings(max_examples=200)
@given(counter_st, counter_st, counter_st)
def test_merge_monoid_laws(a, b, c):
    empty = WsscipCounter()
    assert merge(a, empty) == a == merge(empty, a)
    assert merge(a, b) == merge(b, a)
    assert merge(merge(a, b), c) == merge(a, merge(b, c))


@given(wssci_st, st.lists(fix_st, max_size=30), st.data())
def test_split_and_merge_equals_single_pass(wssci, fixes, data):
    cut = data.draw(st.integers(0, len(fixes)))
    merged = merge(count_wsscipphg(wssci, fixes[:cut]), count_wsscipphg(wssci, fixes[cut:]))
    assert merged == count_wsscipphg(wssci, fixes)


def test_merge_does_not_mutate_inputs():
    a = count_wsscipphg({("u1", DAYS[0])}, [fix("u1", "2020-02-14T09:00:00", G1)])
    b = count_wsscipphg({("u2", DAYS[0])}, [fix("u2", "2020-02-14T09:00:00", G1)])
    snapshot = a.copy()
    merge(a, b)
    assert a == snapshot


def test_merge_mode_mismatch():
    with pytest.raises(ModeMismatchError):
        merge(WsscipCounter(EXACT), WsscipCounter(SKETCH))
    with pytest.raises(CounterError):
        WsscipCounter("approximate")


def test_partitioned_counting_equals_single_pass():
    wssci = {(u, d) for u in USERS for d in DAYS}
    fixes = [fix(u, f"{d.isoformat()}T{h:02d}:00:00", g) for u in USERS for d in DAYS for h in (3, 9, 20) for g in GRIDS[:3]]
    assert count_partitioned(wssci, fixes, jobs=3) == count_wsscipphg(wssci, fixes)


def test_sketch_mode_small_cells_exact():
    wssci = {(u, DAYS[0]) for u in USERS}
    fixes = [fix(u, "2020-02-14T09:00:00", G1) for u in USERS]
    exact = count_wsscipphg(wssci, fixes, mode=EXACT).counts()
    sketch = count_wsscipphg(wssci, fixes, mode=SKETCH).counts()
    assert exact == sketch


def test_weekly_total_sums_days():
    wssci = {("A", DAYS[0]), ("A", DAYS[2])}
    fixes = [fix("A", "2020-02-14T09:00:00", G1), fix("A", "2020-02-16T21:00:00", G1)]
    c = count_wsscipphg(wssci, fixes)
    # brute force: one distinct user on each of 2 days
    assert weekly_total(c, DAYS[0])[(G1, TimeSpan.WHOLE)] == 2
    assert weekly_total(c, DAYS[0])[(G1, TimeSpan.DAY)] == 1
    assert weekly_total(WsscipCounter(), DAYS[0]) == {}
    one = count_wsscipphg({("A", DAYS[0])}, fixes[:1])
    assert weekly_total(one, DAYS[0]) == {(G1, TimeSpan.DAY): 1, (G1, TimeSpan.WHOLE): 1}
    assert weekly_total(c, DAYS[0] + timedelta(days=7)) == {}


@given(wssci_st, st.lists(fix_st, max_size=20))
def test_weekly_total_brute_force(wssci, fixes):
    c = count_wsscipphg(wssci, fixes)
    expected = defaultdict(int)
    for (g, d, s), n in brute_force(wssci, fixes).items():
        if DAYS[0] <= d <= DAYS[0] + timedelta(days=6):
            expected[(g, s)] += n
    assert weekly_total(c, DAYS[0]) == dict(expected)


@pytest.mark.parametrize("mode", [EXACT, SKETCH])
def test_checkpoint_roundtrip(mode):
    wssci = {(u, d) for u in USERS for d in DAYS[:2]}
    fixes = [fix(u, f"{d.isoformat()}T{h:02d}:00:00", g) for u in USERS for d in DAYS[:2] for h in (3, 9) for g in GRIDS[:2]]
    c = count_wsscipphg(wssci, fixes, mode=mode, precision=8)
    main, side = io.StringIO(), io.StringIO()
    write_checkpoint(c, main, side, ["# meta line"])
    text = main.getvalue()
    assert text.startswith("# wssci-counter v1\n")
    assert "grid_code,date,span,count\n" in text
    again = read_checkpoint(io.StringIO(text), io.StringIO(side.getvalue()))
    assert again == c
    mode_read, counts = read_checkpoint_counts(io.StringIO(text))
    assert mode_read == mode and counts == c.counts()


def test_checkpoint_sidecar_mismatch_detected():
    c = count_wsscipphg({("u1", DAYS[0])}, [fix("u1", "2020-02-14T09:00:00", G1)])
    main, side = io.StringIO(), io.StringIO()
    write_checkpoint(c, main, side)
    tampered = main.getvalue().replace(",day,1", ",day,2")
    with pytest.raises(CounterError):
        read_checkpoint(io.StringIO(tampered), io.StringIO(side.getvalue()))
    with pytest.raises(CounterError):
        read_checkpoint_counts(io.StringIO("grid_code,date,span,count\n"))
