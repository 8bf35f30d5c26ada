"""End-to-end run: ingest -> WSSCI -> WSSCIphg -> blocks -> suppression -> ranking -> export."""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any, Iterator

from . import __version__
from .aggregator import (
    EXACT,
    SKETCH,
    TimeSpan,
    WsscipCounter,
    count_partitioned,
    identify_wssci,
    merge,
    read_checkpoint,
    write_checkpoint,
)
from .geogrid import Coverage, GridLevel
from .ingest import IngestStats, StudyWindow, iter_location_log, iter_search_log, open_log, parse_tz
from .patterns import PatternSet, expand_default_patterns, load_pattern_file
from .report import (
    DEFAULT_THRESHOLD,
    HotspotReport,
    aggregate_blocks,
    baseline_ratio,
    emit_choropleth,
    rank_hotspots,
    suppress_small_counts,
    write_baseline_report,
    write_hotspots,
)

log = logging.getLogger(__name__)

COUNTER_FILE = "counter.csv"
SIDECAR_SUFFIX = ".members"
HOTSPOT_FILE = "hotspots.csv"
STATS_FILE = "ingest_stats.json"
BASELINE_FILE = "baseline_ratio.csv"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage {stage!r} failed: {cause}")


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    log.debug("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved settings for one pipeline run."""

    tz: str = "+09:00"
    study_window: str | None = None
    coverage: tuple[float, float, float, float] = Coverage().as_tuple()
    patterns: str = "builtin"
    window_days: int = 0
    counter_mode: str = EXACT
    sketch_precision: int = 10
    threshold: int = DEFAULT_THRESHOLD
    level: str = GridLevel.THIRD.value
    span: str = TimeSpan.WHOLE.value
    date_from: str | None = None
    date_to: str | None = None
    top: int = 10
    format: str = "csv"
    jobs: int = field(default=1, compare=False)

    def __post_init__(self):
        parse_tz(self.tz)
        if self.study_window is not None:
            StudyWindow.parse(self.study_window)
        Coverage(*self.coverage)
        GridLevel(self.level)
        TimeSpan(self.span)
        if self.counter_mode not in (EXACT, SKETCH):
            raise ValueError(f"counter_mode must be exact or sketch, got {self.counter_mode!r}")
        if self.format not in ("csv", "geojson"):
            raise ValueError(f"format must be csv or geojson, got {self.format!r}")
        for name in ("window_days", "threshold", "top", "jobs", "sketch_precision"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v!r}")

    @classmethod
    def resolve(cls, file_values: dict[str, Any] | None = None, **overrides) -> "RunConfig":
        """Defaults, then config-file values, then non-None overrides."""
        names = {f.name for f in dataclasses.fields(cls)}
        values: dict[str, Any] = {}
        for source in (file_values or {}, overrides):
            unknown = sorted(set(source) - names)
            if unknown:
                raise ValueError(f"unknown run settings: {unknown}")
            values.update({k: v for k, v in source.items() if v is not None})
        if "coverage" in values:
            cov = values["coverage"]
            values["coverage"] = Coverage.parse(cov).as_tuple() if isinstance(cov, str) else tuple(float(x) for x in cov)
        return cls(**values)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("jobs")
        d["coverage"] = list(self.coverage)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @property
    def tzinfo(self):
        return parse_tz(self.tz)

    @property
    def window(self) -> StudyWindow | None:
        return StudyWindow.parse(self.study_window) if self.study_window else None


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def metadata_lines(cfg: RunConfig | None, inputs: dict[str, str | Path]) -> list[str]:
    """Header lines for every output: tool version, config digest, input digests."""
    lines = [f"wssci {__version__}"]
    if cfg is not None:
        lines.append(f"config_sha256={cfg.digest()}")
    for label, path in sorted(inputs.items()):
        lines.append(f"input {label} {Path(path).name} sha256={file_digest(path)}")
    return lines


class StagedOutputs:
    """Collect output files in a scratch directory; move them into place only on success."""

    def __init__(self, out_dir: str | Path):
        self.out_dir = Path(out_dir)
        anchor = self.out_dir
        while not anchor.exists():
            anchor = anchor.parent
        self._tmp = Path(tempfile.mkdtemp(prefix=".wssci-stage-", dir=anchor))
        self.names: list[str] = []

    @property
    def dir(self) -> Path:
        return self._tmp

    def register(self, name: str) -> None:
        if name not in self.names:
            self.names.append(name)

    def path(self, name: str) -> Path:
        self.register(name)
        return self._tmp / name

    def open(self, name: str):
        return open(self.path(name), "w", encoding="utf-8", newline="")

    def commit(self) -> dict[str, Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        done = {}
        for name in self.names:
            dest = self.out_dir / name
            os.replace(self._tmp / name, dest)
            done[name] = dest
        shutil.rmtree(self._tmp, ignore_errors=True)
        return done

    def abort(self) -> None:
        shutil.rmtree(self._tmp, ignore_errors=True)

    def __enter__(self) -> "StagedOutputs":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            self.abort()


def load_patterns(source: str) -> PatternSet:
    return expand_default_patterns() if source == "builtin" else load_pattern_file(source)


@dataclass
class RunResult:
    counter: WsscipCounter
    report: HotspotReport
    search_stats: IngestStats
    location_stats: IngestStats
    outputs: dict[str, Path]


def _report_range(cfg: RunConfig, counter_dates: list[date]) -> tuple[date, date] | None:
    window = cfg.window
    start = date.fromisoformat(cfg.date_from) if cfg.date_from else (window.start if window else None)
    end = date.fromisoformat(cfg.date_to) if cfg.date_to else (window.end if window else None)
    if start is None:
        start = min(counter_dates, default=None)
    if end is None:
        end = max(counter_dates, default=None)
    if start is None or end is None:
        return None
    return start, end


def write_report_outputs(
    counts,
    cfg: RunConfig,
    staged: StagedOutputs,
    meta: list[str],
    baseline: str | Path | None = None,
) -> HotspotReport:
    """Aggregate, suppress, rank and emit from ``{(grid, date, span): count}``."""
    level, span = GridLevel(cfg.level), TimeSpan(cfg.span)
    with stage("aggregate"):
        rng = _report_range(cfg, [d for (_, d, _) in counts])
        aggs = aggregate_blocks(counts, level, *rng, span) if rng else []
    with stage("suppress"):
        kept = suppress_small_counts(aggs, cfg.threshold)
    with stage("rank"):
        start, end = rng if rng else (None, None)
        report = rank_hotspots(kept, cfg.top, threshold=cfg.threshold, level=level, span=span, start=start, end=end)
    with stage("emit"):
        with staged.open(HOTSPOT_FILE) as fh:
            write_hotspots(report, fh, meta)
        with staged.open(f"choropleth.{cfg.format}") as fh:
            emit_choropleth(kept, cfg.format, fh, meta)
        if baseline is not None:
            ratios = baseline_ratio(kept, baseline)
            with staged.open(BASELINE_FILE) as fh:
                write_baseline_report(ratios, fh, meta)
    return report


def run_pipeline(
    search_path: str | Path,
    location_path: str | Path,
    out_dir: str | Path,
    cfg: RunConfig,
    salt: str,
    merge_with: str | Path | None = None,
    baseline: str | Path | None = None,
) -> RunResult:
    """Run every stage and write outputs atomically into ``out_dir``."""
    inputs: dict[str, str | Path] = {"search": search_path, "locations": location_path}
    if merge_with is not None:
        inputs["merge_with"] = merge_with
    if baseline is not None:
        inputs["baseline"] = baseline
    with stage("inputs"):
        for label, p in inputs.items():
            if not Path(p).is_file():
                raise FileNotFoundError(f"{label} input {p} does not exist")
        meta = metadata_lines(cfg, inputs)
    tz, window, coverage = cfg.tzinfo, cfg.window, Coverage(*cfg.coverage)

    with StagedOutputs(out_dir) as staged:
        with stage("patterns"):
            patterns = load_patterns(cfg.patterns)
        s_stats, l_stats = IngestStats(), IngestStats()
        with stage("ingest-search"), open_log(search_path) as fh:
            records = list(iter_search_log(fh, salt, s_stats, window=window, tz=tz))
        with stage("identify-wssci"):
            wssci = identify_wssci(records, patterns, cfg.window_days, tz, window)
            del records
        with stage("ingest-locations"), open_log(location_path) as fh:
            fixes = list(iter_location_log(fh, salt, l_stats, window=window, coverage=coverage, tz=tz))
        with stage("count"):
            counter = count_partitioned(
                wssci, fixes, cfg.jobs, tz, cfg.counter_mode, cfg.sketch_precision, coverage
            )
        if merge_with is not None:
            with stage("merge"):
                with open(merge_with, encoding="utf-8") as ck, open(str(merge_with) + SIDECAR_SUFFIX, encoding="utf-8") as sc:
                    counter = merge(read_checkpoint(ck, sc), counter)
        with stage("checkpoint"):
            with staged.open(COUNTER_FILE) as fh, staged.open(COUNTER_FILE + SIDECAR_SUFFIX) as sc:
                write_checkpoint(counter, fh, sc, [f"# {m}" for m in meta])
            stats = {
                "metadata": meta,
                "search": s_stats.as_dict(),
                "locations": l_stats.as_dict(),
                "wssci_user_days": len(wssci),
            }
            with staged.open(STATS_FILE) as fh:
                fh.write(json.dumps(stats, indent=2, sort_keys=True) + "\n")
        report = write_report_outputs(counter.counts(), cfg, staged, meta, baseline)
        outputs = staged.commit()
    log.info("run complete: %d cells, %d hotspot entries", len(counter), len(report.entries))
    return RunResult(counter, report, s_stats, l_stats, outputs)
