"""Distinct WSSCI per half grid (WSSCIphg) per local day and time span."""

from __future__ import annotations

import csv
import enum
import zlib
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from datetime import date, timedelta, timezone
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .geogrid import JAPAN, Coverage, encode_half_grid_many
from .ingest import DEFAULT_TZ, LocationFix, SearchLogRecord, StudyWindow, tz_seconds
from .patterns import PatternSet, match_query, normalize_query
from .sketch import HyperLogLog

EXACT = "exact"
SKETCH = "sketch"
CHECKPOINT_MAGIC = "# wssci-counter v1"
SIDECAR_MAGIC = "# wssci-counter-members v1"
CHECKPOINT_COLUMNS = ("grid_code", "date", "span", "count")

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()


class TimeSpan(enum.Enum):
    DAY = "day"  # 08:00-15:59
    EVENING = "evening"  # 16:00-23:59
    NIGHT = "night"  # 00:00-07:59
    WHOLE = "whole"

    @property
    def order(self) -> int:
        return _SPAN_ORDER[self]


_SPAN_ORDER = {TimeSpan.DAY: 0, TimeSpan.EVENING: 1, TimeSpan.NIGHT: 2, TimeSpan.WHOLE: 3}
_PARTIAL_SPANS = (TimeSpan.NIGHT, TimeSpan.DAY, TimeSpan.EVENING)


class CounterError(ValueError):
    pass


class ModeMismatchError(CounterError):
    pass


def _span_of_hour(hour: int) -> TimeSpan:
    return _PARTIAL_SPANS[hour // 8]


def local_date(timestamp: int, tz: timezone = DEFAULT_TZ) -> date:
    return date.fromordinal(_EPOCH_ORDINAL + (timestamp + tz_seconds(tz)) // 86400)


def classify_timespan(timestamp: int, tz: timezone = DEFAULT_TZ) -> TimeSpan:
    """Partial span (day, evening or night) of a UTC epoch timestamp in ``tz``."""
    hour = ((timestamp + tz_seconds(tz)) % 86400) // 3600
    return _span_of_hour(hour)


def identify_wssci(
    records: Iterable[SearchLogRecord],
    patterns: PatternSet,
    window_days: int = 0,
    tz: timezone = DEFAULT_TZ,
    study_window: StudyWindow | None = None,
) -> set[tuple[str, date]]:
    """(user, local date) pairs on which each user counts as a WSSCI.

    A matching query on day ``d`` marks the user for ``d .. d + window_days``,
    clipped to ``study_window`` when one is given.
    """
    if window_days < 0:
        raise ValueError("window_days must be >= 0")
    cache: dict[str, bool] = {}
    out: set[tuple[str, date]] = set()
    for rec in records:
        hit = cache.get(rec.query)
        if hit is None:
            hit = cache[rec.query] = match_query(patterns, normalize_query(rec.query)).matched
        if not hit:
            continue
        d0 = local_date(rec.timestamp, tz)
        for k in range(window_days + 1):
            d = d0 + timedelta(days=k)
            if study_window is None or d in study_window:
                out.add((rec.user, d))
    return out


CellKey = tuple  # (grid_code, date, TimeSpan)


class WsscipCounter:
    """Mapping (half grid, local date, span) -> distinct-user accumulator.

    ``mode="exact"`` keeps token sets; ``mode="sketch"`` keeps a
    :class:`HyperLogLog` per cell. Counters form a commutative monoid under
    :func:`merge` with the empty counter as identity.
    """

    def __init__(self, mode: str = EXACT, precision: int = 10):
        if mode not in (EXACT, SKETCH):
            raise CounterError(f"unknown counter mode {mode!r}")
        self.mode = mode
        self.precision = precision
        self.cells: dict[CellKey, set[str] | HyperLogLog] = {}

    def _new(self):
        return set() if self.mode == EXACT else HyperLogLog(self.precision)

    def add(self, grid: str, day: date, span: TimeSpan, user: str) -> None:
        self.add_many(grid, day, span, (user,))

    def add_many(self, grid: str, day: date, span: TimeSpan, users: Iterable[str]) -> None:
        acc = self.cells.get((grid, day, span))
        if acc is None:
            acc = self.cells[(grid, day, span)] = self._new()
        acc.update(users)

    def count(self, grid: str, day: date, span: TimeSpan) -> int:
        acc = self.cells.get((grid, day, span))
        if acc is None:
            return 0
        return len(acc) if self.mode == EXACT else acc.count()

    def counts(self) -> dict[CellKey, int]:
        if self.mode == EXACT:
            return {k: len(v) for k, v in self.cells.items()}
        return {k: v.count() for k, v in self.cells.items()}

    def keys(self) -> list[CellKey]:
        return sorted(self.cells, key=_cell_sort_key)

    def __len__(self) -> int:
        return len(self.cells)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WsscipCounter):
            return NotImplemented
        return (
            self.mode == other.mode
            and (self.mode == EXACT or self.precision == other.precision)
            and self.cells == other.cells
        )

    def __repr__(self) -> str:
        return f"WsscipCounter(mode={self.mode!r}, cells={len(self.cells)})"

    def copy(self) -> "WsscipCounter":
        out = WsscipCounter(self.mode, self.precision)
        out.cells = {k: (set(v) if self.mode == EXACT else v.copy()) for k, v in self.cells.items()}
        return out

    def merge(self, other: "WsscipCounter") -> "WsscipCounter":
        return merge(self, other)


def _cell_sort_key(key: CellKey):
    grid, day, span = key
    return grid, day, span.order


def merge(a: WsscipCounter, b: WsscipCounter) -> WsscipCounter:
    """Cell-wise union of two counters (neither input is modified)."""
    if a.mode != b.mode:
        raise ModeMismatchError(f"cannot merge {a.mode} counter with {b.mode} counter")
    if a.mode == SKETCH and a.precision != b.precision:
        raise ModeMismatchError(f"sketch precisions differ: {a.precision} vs {b.precision}")
    out = a.copy()
    for key, acc in b.cells.items():
        mine = out.cells.get(key)
        if mine is None:
            out.cells[key] = set(acc) if a.mode == EXACT else acc.copy()
        elif a.mode == EXACT:
            mine |= acc
        else:
            out.cells[key] = mine.merge(acc)
    return out


def count_wsscipphg(
    wssci: set[tuple[str, date]] | frozenset,
    fixes: Iterable[LocationFix],
    tz: timezone = DEFAULT_TZ,
    mode: str = EXACT,
    precision: int = 10,
    coverage: Coverage = JAPAN,
) -> WsscipCounter:
    """Insert each WSSCI user-day's fixes into its half grid, span and whole-day cell."""
    offset = tz_seconds(tz)
    users: list[str] = []
    days: list[date] = []
    hours: list[int] = []
    lats: list[float] = []
    lons: list[float] = []
    for fix in fixes:
        local = fix.timestamp + offset
        d = date.fromordinal(_EPOCH_ORDINAL + local // 86400)
        if (fix.user, d) not in wssci:
            continue
        users.append(fix.user)
        days.append(d)
        hours.append((local % 86400) // 3600)
        lats.append(fix.lat)
        lons.append(fix.lon)
    counter = WsscipCounter(mode, precision)
    if not users:
        return counter
    grids = encode_half_grid_many(np.array(lats), np.array(lons), coverage)
    members: dict[CellKey, set[str]] = defaultdict(set)
    for user, grid, d, hour in zip(users, grids, days, hours):
        members[(grid, d, _span_of_hour(hour))].add(user)
        members[(grid, d, TimeSpan.WHOLE)].add(user)
    for key in sorted(members, key=_cell_sort_key):
        counter.add_many(*key, members[key])
    return counter


def _count_partition(args):
    wssci, fixes, tz, mode, precision, coverage = args
    return count_wsscipphg(wssci, fixes, tz, mode, precision, coverage)


def count_partitioned(
    wssci: set[tuple[str, date]],
    fixes: Sequence[LocationFix],
    jobs: int,
    tz: timezone = DEFAULT_TZ,
    mode: str = EXACT,
    precision: int = 10,
    coverage: Coverage = JAPAN,
) -> WsscipCounter:
    """:func:`count_wsscipphg` over ``jobs`` user partitions, merged."""
    if jobs <= 1:
        return count_wsscipphg(wssci, fixes, tz, mode, precision, coverage)
    parts: list[list[LocationFix]] = [[] for _ in range(jobs)]
    for fix in fixes:
        parts[zlib.crc32(fix.user.encode("utf-8")) % jobs].append(fix)
    tasks = [(wssci, p, tz, mode, precision, coverage) for p in parts if p]
    result = WsscipCounter(mode, precision)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for part in pool.map(_count_partition, tasks):
            result = merge(result, part)
    return result


def weekly_total(counter: WsscipCounter, week_start: date) -> dict[tuple[str, TimeSpan], int]:
    """Sum of daily WSSCIphg over ``week_start`` and the following 6 days."""
    week_end = week_start + timedelta(days=6)
    totals: dict[tuple[str, TimeSpan], int] = defaultdict(int)
    for (grid, day, span), n in counter.counts().items():
        if week_start <= day <= week_end:
            totals[(grid, span)] += n
    return dict(totals)


def write_checkpoint(
    counter: WsscipCounter,
    stream: IO[str],
    sidecar: IO[str] | None = None,
    metadata: Sequence[str] = (),
) -> None:
    """Write ``grid_code,date,span,count`` rows and, optionally, the member sidecar."""
    head = [CHECKPOINT_MAGIC, f"# mode={counter.mode} precision={counter.precision}", *metadata]
    stream.write("".join(f"{h}\n" for h in head))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CHECKPOINT_COLUMNS)
    counts = counter.counts()
    keys = counter.keys()
    for key in keys:
        grid, day, span = key
        w.writerow((grid, day.isoformat(), span.value, counts[key]))
    if sidecar is None:
        return
    sidecar.write(f"{SIDECAR_MAGIC}\n# mode={counter.mode} precision={counter.precision}\n")
    sw = csv.writer(sidecar, lineterminator="\n")
    sw.writerow(("grid_code", "date", "span", "members"))
    for key in keys:
        grid, day, span = key
        acc = counter.cells[key]
        payload = " ".join(sorted(acc)) if counter.mode == EXACT else acc.to_text()
        sw.writerow((grid, day.isoformat(), span.value, payload))


def _header_mode(lines: list[str], magic: str, what: str) -> tuple[str, int]:
    if not lines or lines[0].strip() != magic:
        raise CounterError(f"{what} does not start with {magic!r}")
    fields = dict(tok.split("=", 1) for tok in lines[1].lstrip("# ").split() if "=" in tok)
    try:
        return fields["mode"], int(fields["precision"])
    except (KeyError, ValueError):
        raise CounterError(f"{what} has no mode/precision header line") from None


def _data_rows(lines: list[str]) -> Iterator[list[str]]:
    body = [ln for ln in lines if not ln.startswith("#")]
    for row in csv.reader(body[1:]):
        if row:
            yield row


def read_checkpoint_counts(stream: IO[str]) -> tuple[str, dict[CellKey, int]]:
    """Counts-only view of a checkpoint file: (mode, {cell: count})."""
    lines = stream.read().splitlines()
    mode, _ = _header_mode(lines, CHECKPOINT_MAGIC, "checkpoint")
    out = {}
    for row in _data_rows(lines):
        grid, day, span, n = row
        out[(grid, date.fromisoformat(day), TimeSpan(span))] = int(n)
    return mode, out


def read_checkpoint(stream: IO[str], sidecar: IO[str]) -> WsscipCounter:
    """Rebuild a mergeable counter from a checkpoint and its member sidecar."""
    mode, counts = read_checkpoint_counts(stream)
    lines = sidecar.read().splitlines()
    smode, precision = _header_mode(lines, SIDECAR_MAGIC, "checkpoint sidecar")
    if smode != mode:
        raise CounterError(f"checkpoint mode {mode} disagrees with sidecar mode {smode}")
    counter = WsscipCounter(mode, precision)
    for row in _data_rows(lines):
        grid, day, span, payload = row
        key = (grid, date.fromisoformat(day), TimeSpan(span))
        if mode == EXACT:
            counter.cells[key] = set(payload.split())
        else:
            counter.cells[key] = HyperLogLog.from_text(payload, precision)
    if counter.counts() != counts:
        raise CounterError("checkpoint counts disagree with sidecar members")
    return counter
