"""Synthetic search/location logs with a planted symptom-query cluster.

Scenario config (JSON)::

    {
      "seed": 7,
      "n_users": 200,
      "study_window": "2020-02-10..2020-02-23",
      "area": [43.00, 141.25, 43.10, 141.45],     # south, west, north, east
      "background_match_rate": 0.01,
      "fixes_per_day": 4,
      "move_radius": 1,                           # in half grids
      "noise_queries_per_day": 1.0,
      "consent_rate": 1.0,
      "tz": "+09:00",
      "cluster": {
        "grids": ["64414268"],                    # any mesh level; expanded to half grids
        "active": "2020-02-10..2020-02-23",
        "user_fraction": 0.1,
        "match_rate": 0.5
      }
    }

Every key is optional except ``seed``; ``"cluster": null`` disables the
cluster. Output: ``search_log.csv``, ``location_log.csv``, ``truth.json``
and ``scenario.json`` (the fully resolved config).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .geogrid import Coverage, GridLevel, decode_block, decode_half_grid, encode_half_grid, half_grids_in
from .ingest import LOCATION_COLUMNS, SEARCH_COLUMNS, StudyWindow, format_tz, parse_tz
from .patterns import expand_default_patterns
from .report import HotspotReport

NOISE_QUERIES = (
    "weather tomorrow",
    "train timetable",
    "curry recipe",
    "baseball scores",
    "news today",
    "snow festival",
    "ramen near station",
    "exchange rate",
    "movie showtimes",
    "ski resort",
    "library hours",
    "used cars",
)
WILDCARD_SUFFIXES = ("", "virus", "-19", " virus")

SEARCH_FILE = "search_log.csv"
LOCATION_FILE = "location_log.csv"
TRUTH_FILE = "truth.json"
SCENARIO_FILE = "scenario.json"


class ScenarioConfigError(ValueError):
    pass


class LevelMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterConfig:
    grids: tuple[str, ...]
    active: StudyWindow
    user_fraction: float = 0.1
    match_rate: float = 0.5

    def half_grids(self) -> list[str]:
        out: list[str] = []
        for code in self.grids:
            out.extend(half_grids_in(code))
        return sorted(set(out))


DEFAULT_AREA = Coverage(43.00, 141.25, 43.10, 141.45)
DEFAULT_WINDOW = StudyWindow(date(2020, 2, 10), date(2020, 2, 23))
# Third-mesh block around (43.05, 141.35), inside DEFAULT_AREA.
DEFAULT_CLUSTER_BLOCK = encode_half_grid(43.0521, 141.3507)[:8]


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    n_users: int = 200
    study_window: StudyWindow = DEFAULT_WINDOW
    area: Coverage = DEFAULT_AREA
    background_match_rate: float = 0.01
    fixes_per_day: int = 4
    move_radius: int = 1
    noise_queries_per_day: float = 1.0
    consent_rate: float = 1.0
    tz: timezone = field(default_factory=lambda: parse_tz("+09:00"))
    cluster: ClusterConfig | None = field(
        default_factory=lambda: ClusterConfig((DEFAULT_CLUSTER_BLOCK,), DEFAULT_WINDOW)
    )

    def __post_init__(self):
        _check_int("seed", self.seed, lo=0)
        _check_int("n_users", self.n_users, lo=1)
        _check_int("fixes_per_day", self.fixes_per_day, lo=0)
        _check_int("move_radius", self.move_radius, lo=0)
        _check_rate("background_match_rate", self.background_match_rate)
        _check_rate("consent_rate", self.consent_rate)
        if not isinstance(self.noise_queries_per_day, (int, float)) or self.noise_queries_per_day < 0:
            raise ScenarioConfigError("noise_queries_per_day: expected a non-negative number")
        c = self.cluster
        if c is None:
            return
        _check_rate("cluster.user_fraction", c.user_fraction)
        _check_rate("cluster.match_rate", c.match_rate)
        if not c.match_rate > self.background_match_rate:
            raise ScenarioConfigError("cluster.match_rate must exceed background_match_rate")
        if not c.grids:
            raise ScenarioConfigError("cluster.grids: at least one grid code required")
        for code in c.grids:
            try:
                box = decode_block(code)
            except ValueError as exc:
                raise ScenarioConfigError(f"cluster.grids: {exc}") from None
            if not (self.area.south <= box.south and box.north <= self.area.north
                    and self.area.west <= box.west and box.east <= self.area.east):
                raise ScenarioConfigError(f"cluster.grids: {code} lies outside the scenario area")

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "ScenarioConfig":
        if not isinstance(raw, dict):
            raise ScenarioConfigError("scenario config must be a JSON object")
        known = {
            "seed", "n_users", "study_window", "area", "background_match_rate", "fixes_per_day",
            "move_radius", "noise_queries_per_day", "consent_rate", "tz", "cluster",
        }
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ScenarioConfigError(f"unknown config keys: {unknown}")
        if "seed" not in raw:
            raise ScenarioConfigError("seed: required")
        kw: dict[str, Any] = {k: raw[k] for k in raw if k not in {"study_window", "area", "tz", "cluster"}}
        try:
            if "study_window" in raw:
                kw["study_window"] = StudyWindow.parse(_as_str("study_window", raw["study_window"]))
            if "area" in raw:
                area = raw["area"]
                if not (isinstance(area, list) and len(area) == 4):
                    raise ScenarioConfigError("area: expected [south, west, north, east]")
                kw["area"] = Coverage(*(float(v) for v in area))
            if "tz" in raw:
                kw["tz"] = parse_tz(_as_str("tz", raw["tz"]))
            window = kw.get("study_window", DEFAULT_WINDOW)
            if "cluster" in raw:
                kw["cluster"] = _cluster_from_dict(raw["cluster"], window)
            elif "study_window" in raw:
                kw["cluster"] = ClusterConfig((DEFAULT_CLUSTER_BLOCK,), window)
        except ScenarioConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ScenarioConfigError(str(exc)) from None
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        c = self.cluster
        return {
            "seed": self.seed,
            "n_users": self.n_users,
            "study_window": str(self.study_window),
            "area": list(self.area.as_tuple()),
            "background_match_rate": self.background_match_rate,
            "fixes_per_day": self.fixes_per_day,
            "move_radius": self.move_radius,
            "noise_queries_per_day": self.noise_queries_per_day,
            "consent_rate": self.consent_rate,
            "tz": format_tz(self.tz),
            "cluster": None if c is None else {
                "grids": list(c.grids),
                "active": str(c.active),
                "user_fraction": c.user_fraction,
                "match_rate": c.match_rate,
            },
        }

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=seed)


def _check_int(name: str, value, lo: int) -> None:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioConfigError(f"{name}: expected an integer, got {type(value).__name__} {value!r}")
    if value < lo:
        raise ScenarioConfigError(f"{name}: must be >= {lo}, got {value}")


def _check_rate(name: str, value) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise ScenarioConfigError(f"{name}: expected a probability in [0, 1], got {value!r}")


def _as_str(name: str, value) -> str:
    if not isinstance(value, str):
        raise ScenarioConfigError(f"{name}: expected a string, got {type(value).__name__}")
    return value


def _cluster_from_dict(raw, window: StudyWindow) -> ClusterConfig | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ScenarioConfigError("cluster: expected an object or null")
    unknown = sorted(set(raw) - {"grids", "active", "user_fraction", "match_rate"})
    if unknown:
        raise ScenarioConfigError(f"cluster: unknown keys {unknown}")
    grids = raw.get("grids", [DEFAULT_CLUSTER_BLOCK])
    if not isinstance(grids, list) or not all(isinstance(g, str) for g in grids):
        raise ScenarioConfigError("cluster.grids: expected a list of grid code strings")
    active = StudyWindow.parse(_as_str("cluster.active", raw["active"])) if "active" in raw else window
    kw = {k: raw[k] for k in ("user_fraction", "match_rate") if k in raw}
    return ClusterConfig(tuple(grids), active, **kw)


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioConfigError(f"{path}: invalid JSON: {exc}") from None
    return ScenarioConfig.from_dict(raw)


@dataclass(frozen=True)
class GroundTruth:
    blocks: dict[GridLevel, tuple[str, ...]]
    start: date | None
    end: date | None
    affected_users: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "cluster_blocks": {lvl.value: list(codes) for lvl, codes in self.blocks.items()},
            "elevated": None if self.start is None else [self.start.isoformat(), self.end.isoformat()],
            "affected_users": self.affected_users,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "GroundTruth":
        blocks = {GridLevel(k): tuple(v) for k, v in raw["cluster_blocks"].items()}
        el = raw.get("elevated")
        start, end = (None, None) if el is None else (date.fromisoformat(el[0]), date.fromisoformat(el[1]))
        return cls(blocks, start, end, raw.get("affected_users", 0))


def _affected_count(cfg: ScenarioConfig) -> int:
    if cfg.cluster is None:
        return 0
    return int(round(cfg.cluster.user_fraction * cfg.n_users))


def ground_truth(cfg: ScenarioConfig) -> GroundTruth:
    c = cfg.cluster
    if c is None or _affected_count(cfg) == 0:
        return GroundTruth({lvl: () for lvl in GridLevel}, None, None, 0)
    halves = c.half_grids()
    blocks = {lvl: tuple(sorted({h[: lvl.digits] for h in halves})) for lvl in GridLevel}
    start = max(c.active.start, cfg.study_window.start)
    end = min(c.active.end, cfg.study_window.end)
    return GroundTruth(blocks, start, end, _affected_count(cfg))


def expected_wssci_user_days(cfg: ScenarioConfig) -> float:
    """Analytic mean number of (user, day) pairs with a matching query."""
    days = cfg.study_window.days()
    n_aff = _affected_count(cfg)
    bg = cfg.background_match_rate
    total = (cfg.n_users - n_aff) * len(days) * bg
    if n_aff:
        active = sum(d in cfg.cluster.active for d in days)
        total += n_aff * (active * cfg.cluster.match_rate + (len(days) - active) * bg)
    return total


@dataclass
class Scenario:
    search_rows: list[tuple[str, str, str]]
    location_rows: list[tuple[str, str, str, str, str]]
    truth: GroundTruth
    config: ScenarioConfig

    def search_csv(self) -> str:
        return _csv_text(SEARCH_COLUMNS, self.search_rows)

    def location_csv(self) -> str:
        return _csv_text(LOCATION_COLUMNS, self.location_rows)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _render_query(rng: np.random.Generator, pattern) -> str:
    parts = []
    for term in pattern.terms:
        text = term.text
        if term.wildcard:
            text += WILDCARD_SUFFIXES[rng.integers(len(WILDCARD_SUFFIXES))]
        parts.append(text)
    if len(parts) == 2 and rng.random() < 0.5:
        parts.reverse()
    return " ".join(parts)


def _area_cells(area: Coverage) -> tuple[int, int, int, int]:
    """Half-grid index ranges [j0, j1) x [i0, i1) of cells fully inside ``area``."""
    j0, j1 = math.ceil(area.south * 240 - 1e-9), math.floor(area.north * 240 + 1e-9)
    i0, i1 = math.ceil(area.west * 160 - 1e-9), math.floor(area.east * 160 + 1e-9)
    if j1 <= j0 or i1 <= i0:
        raise ScenarioConfigError("area is smaller than one half grid")
    return j0, j1, i0, i1


def _cell_index(code: str) -> tuple[int, int]:
    box = decode_half_grid(code)
    lat, lon = box.center
    return math.floor(lat * 240), math.floor(lon * 160)


def generate_scenario(cfg: ScenarioConfig) -> Scenario:
    """Draw a full scenario from ``cfg``; identical configs give identical output."""
    rng = np.random.default_rng(cfg.seed)
    patterns = expand_default_patterns().patterns
    j0, j1, i0, i1 = _area_cells(cfg.area)
    days = cfg.study_window.days()
    day_lo, _ = cfg.study_window.bounds(cfg.tz)

    n_aff = _affected_count(cfg)
    order = rng.permutation(cfg.n_users)
    affected = set(order[:n_aff].tolist())
    cluster_cells = [_cell_index(h) for h in cfg.cluster.half_grids()] if cfg.cluster else []

    search: list[tuple[int, str, str]] = []
    locs: list[tuple[int, str, float, float, str]] = []
    for u in range(cfg.n_users):
        uid = f"user{u:05d}"
        if u in affected:
            hj, hi = cluster_cells[rng.integers(len(cluster_cells))]
        else:
            hj, hi = int(rng.integers(j0, j1)), int(rng.integers(i0, i1))
        consent = "true" if rng.random() < cfg.consent_rate else "false"
        for k, d in enumerate(days):
            t0 = day_lo + 86400 * k
            rate = cfg.background_match_rate
            if u in affected and d in cfg.cluster.active:
                rate = cfg.cluster.match_rate
            if rng.random() < rate:
                pat = patterns[rng.integers(len(patterns))]
                search.append((t0 + int(rng.integers(86400)), uid, _render_query(rng, pat)))
            for _ in range(rng.poisson(cfg.noise_queries_per_day)):
                q = NOISE_QUERIES[rng.integers(len(NOISE_QUERIES))]
                search.append((t0 + int(rng.integers(86400)), uid, q))
            r = cfg.move_radius
            for _ in range(cfg.fixes_per_day):
                cj = min(max(hj + int(rng.integers(-r, r + 1)), j0), j1 - 1)
                ci = min(max(hi + int(rng.integers(-r, r + 1)), i0), i1 - 1)
                # Keep a 5% margin so 6-decimal rounding never crosses a cell edge.
                lat = (cj + 0.05 + 0.9 * rng.random()) / 240
                lon = (ci + 0.05 + 0.9 * rng.random()) / 160
                locs.append((t0 + int(rng.integers(86400)), uid, lat, lon, consent))

    search.sort(key=lambda r: (r[0], r[1], r[2]))
    locs.sort(key=lambda r: (r[0], r[1]))
    search_rows = [(uid, _iso(ts), q) for ts, uid, q in search]
    location_rows = [(uid, _iso(ts), f"{lat:.6f}", f"{lon:.6f}", c) for ts, uid, lat, lon, c in locs]
    return Scenario(search_rows, location_rows, ground_truth(cfg), cfg)


def write_scenario(scenario: Scenario, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        SEARCH_FILE: scenario.search_csv(),
        LOCATION_FILE: scenario.location_csv(),
        TRUTH_FILE: json.dumps(scenario.truth.to_dict(), indent=2, sort_keys=True) + "\n",
        SCENARIO_FILE: json.dumps(scenario.config.to_dict(), indent=2, sort_keys=True) + "\n",
    }
    paths = {}
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8", newline="")
        paths[name] = p
    return paths


@dataclass(frozen=True)
class DetectionMetrics:
    planted_rank: int | None
    precision_at_k: float
    k: int


def evaluate_detection(report: HotspotReport, truth: GroundTruth, k: int | None = None) -> DetectionMetrics:
    """Rank of the best-placed planted block and precision among the top ``k``."""
    if report.level is None and report.entries:
        raise LevelMismatchError("report carries no grid level")
    level = report.level
    if level is not None:
        if level not in truth.blocks:
            raise LevelMismatchError(f"ground truth has no blocks at the {level.value} level")
        if any(len(e.block_code) != level.digits for e in report.entries):
            raise LevelMismatchError(f"report entries are not {level.value}-level codes")
    planted = set(truth.blocks.get(level, ())) if level is not None else set()
    k = report.k if k is None else k
    ranks = [e.rank for e in report.entries if e.block_code in planted]
    top = report.entries[:k]
    hits = sum(e.block_code in planted for e in top)
    return DetectionMetrics(min(ranks) if ranks else None, hits / k if k else 0.0, k)
