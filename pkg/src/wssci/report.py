"""Block aggregation, small-count suppression, hotspot ranking and export."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from .aggregator import CellKey, TimeSpan, WsscipCounter
from .geogrid import GridLevel, decode_block, truncate_to_level

DEFAULT_THRESHOLD = 3
CHOROPLETH_COLUMNS = ("block_code", "south", "west", "north", "east", "total")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class BlockAggregate:
    block_code: str
    start: date
    end: date
    span: TimeSpan
    total: int
    members: int = 0  # distinct half grids with a non-zero cell

    @property
    def level(self) -> GridLevel:
        return GridLevel.from_digits(len(self.block_code))


@dataclass(frozen=True)
class HotspotEntry:
    block_code: str
    total: int
    rank: int


@dataclass(frozen=True)
class HotspotReport:
    entries: tuple[HotspotEntry, ...]
    suppression_threshold: int
    level: GridLevel | None
    span: TimeSpan | None
    start: date | None
    end: date | None
    k: int

    def codes(self) -> list[str]:
        return [e.block_code for e in self.entries]


@dataclass(frozen=True)
class BaselineRatio:
    block_code: str
    wssci_total: int
    baseline: float

    @property
    def ratio(self) -> float:
        return self.wssci_total / self.baseline


@dataclass
class BaselineReport:
    ratios: list[BaselineRatio] = field(default_factory=list)
    uncovered: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (block_code, message)


def _cell_counts(counter) -> Mapping[CellKey, int]:
    return counter.counts() if isinstance(counter, WsscipCounter) else counter


def aggregate_blocks(
    counter: WsscipCounter | Mapping[CellKey, int],
    level: GridLevel,
    start: date,
    end: date,
    span: TimeSpan = TimeSpan.WHOLE,
) -> list[BlockAggregate]:
    """Sum WSSCIphg per ``level`` block over ``start..end`` (inclusive) for ``span``.

    Accepts either a counter or a plain ``{(grid, date, span): count}`` mapping.
    """
    if end < start:
        raise ReportError(f"empty date range {start}..{end}")
    totals: dict[str, int] = defaultdict(int)
    members: dict[str, set[str]] = defaultdict(set)
    for (grid, day, sp), n in _cell_counts(counter).items():
        if sp is not span or not start <= day <= end or n <= 0:
            continue
        block = truncate_to_level(grid, level)
        totals[block] += n
        members[block].add(grid)
    return [
        BlockAggregate(code, start, end, span, totals[code], len(members[code]))
        for code in sorted(totals)
    ]


def suppress_small_counts(aggs: Iterable[BlockAggregate], threshold: int = DEFAULT_THRESHOLD) -> list[BlockAggregate]:
    """Drop every aggregate whose total is below ``threshold``."""
    if threshold < 0:
        raise ReportError("suppression threshold must be >= 0")
    return [a for a in aggs if a.total >= threshold]


def rank_hotspots(
    aggs: Sequence[BlockAggregate],
    k: int,
    *,
    threshold: int = 0,
    level: GridLevel | None = None,
    span: TimeSpan | None = None,
    start: date | None = None,
    end: date | None = None,
) -> HotspotReport:
    """Top ``k`` blocks by total; ties go to the smaller block code.

    ``threshold`` only echoes the suppression already applied to ``aggs``.
    Parameters left as None are taken from the aggregates when possible.
    """
    if k < 0:
        raise ReportError("k must be >= 0")
    if aggs:
        first = aggs[0]
        level = level or first.level
        span = span or first.span
        start = start or first.start
        end = end or first.end
    ordered = sorted(aggs, key=lambda a: (-a.total, a.block_code))[:k]
    entries = tuple(HotspotEntry(a.block_code, a.total, i) for i, a in enumerate(ordered, start=1))
    return HotspotReport(entries, threshold, level, span, start, end, k)


def load_baseline(path: str | Path) -> dict[str, str]:
    """Raw ``block_code -> value`` text from a ``block_code,value`` CSV."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames is None or not {"block_code", "value"} <= set(reader.fieldnames):
        raise ReportError(f"{path}: baseline file needs a 'block_code,value' header")
    return {row["block_code"].strip(): (row["value"] or "").strip() for row in reader}


def baseline_ratio(aggs: Iterable[BlockAggregate], baseline: Mapping[str, object] | str | Path) -> BaselineReport:
    """WSSCI total divided by a per-block baseline such as resident population."""
    if isinstance(baseline, (str, Path)):
        baseline = load_baseline(baseline)
    out = BaselineReport()
    for agg in aggs:
        if agg.block_code not in baseline:
            out.uncovered.append(agg.block_code)
            continue
        raw = baseline[agg.block_code]
        try:
            value = float(raw)
        except (TypeError, ValueError):
            out.errors.append((agg.block_code, f"baseline value {raw!r} is not a number"))
            continue
        if not math.isfinite(value) or value <= 0:
            out.errors.append((agg.block_code, f"baseline value {raw!r} must be positive"))
            continue
        out.ratios.append(BaselineRatio(agg.block_code, agg.total, value))
    return out


def _comment_lines(metadata: Sequence[str]) -> str:
    return "".join(f"# {m}\n" for m in metadata)


def emit_choropleth(aggs: Iterable[BlockAggregate], fmt: str, stream: IO[str], metadata: Sequence[str] = ()) -> None:
    """Write block boxes with their totals as CSV or a GeoJSON FeatureCollection."""
    rows = []
    for agg in sorted(aggs, key=lambda a: a.block_code):
        box = decode_block(agg.block_code)
        rows.append((agg.block_code, box, agg.total))
    if fmt == "csv":
        stream.write(_comment_lines(metadata))
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(CHOROPLETH_COLUMNS)
        for code, box, total in rows:
            w.writerow((code, repr(box.south), repr(box.west), repr(box.north), repr(box.east), total))
    elif fmt == "geojson":
        features = [
            {
                "type": "Feature",
                "id": code,
                "properties": {"block_code": code, "total": total},
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [box.west, box.south],
                        [box.east, box.south],
                        [box.east, box.north],
                        [box.west, box.north],
                        [box.west, box.south],
                    ]],
                },
            }
            for code, box, total in rows
        ]
        doc = {"type": "FeatureCollection", "metadata": list(metadata), "features": features}
        stream.write(json.dumps(doc, indent=1, sort_keys=True))
        stream.write("\n")
    else:
        raise ReportError(f"unknown choropleth format {fmt!r}; use csv or geojson")


def write_hotspots(report: HotspotReport, stream: IO[str], metadata: Sequence[str] = ()) -> None:
    params = [
        f"level={report.level.value if report.level else ''}",
        f"span={report.span.value if report.span else ''}",
        f"from={report.start or ''} to={report.end or ''}",
        f"threshold={report.suppression_threshold} top={report.k}",
    ]
    stream.write(_comment_lines([*metadata, " ".join(params)]))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("rank", "block_code", "total"))
    for e in report.entries:
        w.writerow((e.rank, e.block_code, e.total))


def write_baseline_report(report: BaselineReport, stream: IO[str], metadata: Sequence[str] = ()) -> None:
    stream.write(_comment_lines(metadata))
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(("block_code", "status", "wssci_total", "baseline", "ratio"))
    for r in sorted(report.ratios, key=lambda r: r.block_code):
        w.writerow((r.block_code, "ok", r.wssci_total, repr(r.baseline), repr(r.ratio)))
    for code in sorted(report.uncovered):
        w.writerow((code, "uncovered", "", "", ""))
    for code, msg in sorted(report.errors):
        w.writerow((code, f"error: {msg}", "", "", ""))
