"""Log ingestion: CSV parsing, consent gating and pseudonymization.

Search log columns: ``user_id,timestamp,query``.
Location log columns: ``user_id,timestamp,lat,lon,consent``.

Timestamps are ISO-8601 (naive values are taken as UTC) or epoch seconds.
Raw user ids are replaced by keyed digests before a record leaves this
module; nothing downstream ever sees them.
"""

from __future__ import annotations

import csv
import hashlib
import hmac
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import IO, Iterator

from .geogrid import JAPAN, Coverage
from .patterns import normalize_query

SEARCH_COLUMNS = ("user_id", "timestamp", "query")
LOCATION_COLUMNS = ("user_id", "timestamp", "lat", "lon", "consent")
_TRUE = {"true", "1"}
_FALSE = {"false", "0"}

DEFAULT_TZ = timezone(timedelta(hours=9))


class IngestError(Exception):
    """The stream as a whole cannot be read (missing header, bad encoding)."""


class SaltError(ValueError):
    pass


def pseudonymize(raw_id: str, salt: str) -> str:
    """HMAC-SHA256 of ``raw_id`` keyed by ``salt``, as 64 hex characters."""
    if not salt:
        raise SaltError("refusing to pseudonymize without a salt")
    if not raw_id:
        raise ValueError("empty user id")
    return hmac.new(salt.encode("utf-8"), raw_id.encode("utf-8"), hashlib.sha256).hexdigest()


def parse_tz(text: str) -> timezone:
    """Parse a fixed offset such as ``+09:00``, ``-0530`` or ``Z``."""
    t = text.strip()
    if t in {"Z", "UTC", "utc"}:
        return timezone.utc
    sign = {"+": 1, "-": -1}.get(t[:1])
    body = t[1:].replace(":", "")
    if sign is None or not body.isdigit() or len(body) not in (2, 4):
        raise ValueError(f"bad timezone offset {text!r}; expected e.g. +09:00")
    hours, minutes = int(body[:2]), int(body[2:] or 0)
    if hours > 23 or minutes > 59:
        raise ValueError(f"bad timezone offset {text!r}")
    return timezone(sign * timedelta(hours=hours, minutes=minutes))


def format_tz(tz: timezone) -> str:
    minutes = int(tz.utcoffset(None).total_seconds()) // 60
    sign = "+" if minutes >= 0 else "-"
    h, m = divmod(abs(minutes), 60)
    return f"{sign}{h:02d}:{m:02d}"


def tz_seconds(tz: timezone) -> int:
    return int(tz.utcoffset(None).total_seconds())


@dataclass(frozen=True)
class StudyWindow:
    """Inclusive range of local calendar dates."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"study window ends before it starts: {self.start}..{self.end}")

    @classmethod
    def parse(cls, text: str) -> "StudyWindow":
        """Parse ``YYYY-MM-DD..YYYY-MM-DD``."""
        start, sep, end = text.partition("..")
        if not sep:
            raise ValueError(f"study window must look like START..END, got {text!r}")
        return cls(date.fromisoformat(start.strip()), date.fromisoformat(end.strip()))

    def bounds(self, tz: timezone) -> tuple[int, int]:
        """Epoch-second bounds ``[lo, hi)`` of the window in local time ``tz``."""
        lo = datetime(self.start.year, self.start.month, self.start.day, tzinfo=tz)
        hi = datetime(self.end.year, self.end.month, self.end.day, tzinfo=tz) + timedelta(days=1)
        return int(lo.timestamp()), int(hi.timestamp())

    def __contains__(self, day: date) -> bool:
        return self.start <= day <= self.end

    def days(self) -> list[date]:
        n = (self.end - self.start).days + 1
        return [self.start + timedelta(days=k) for k in range(n)]

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True)
class SearchLogRecord:
    user: str
    timestamp: int
    query: str


@dataclass(frozen=True)
class LocationFix:
    user: str
    timestamp: int
    lat: float
    lon: float
    consent: bool = True


@dataclass
class IngestStats:
    records_read: int = 0
    records_kept: int = 0
    drops_by_reason: Counter = field(default_factory=Counter)

    def drop(self, reason: str) -> None:
        self.drops_by_reason[reason] += 1

    def merge(self, other: "IngestStats") -> "IngestStats":
        return IngestStats(
            self.records_read + other.records_read,
            self.records_kept + other.records_kept,
            self.drops_by_reason + other.drops_by_reason,
        )

    @property
    def balanced(self) -> bool:
        return self.records_read == self.records_kept + sum(self.drops_by_reason.values())

    def as_dict(self) -> dict:
        return {
            "records_read": self.records_read,
            "records_kept": self.records_kept,
            "drops_by_reason": dict(sorted(self.drops_by_reason.items())),
        }


def parse_timestamp(text: str) -> int:
    """Epoch seconds (UTC) from epoch digits or an ISO-8601 string."""
    t = text.strip()
    try:
        value = float(t)
    except ValueError:
        pass
    else:
        if not math.isfinite(value):
            raise ValueError(f"non-finite timestamp {text!r}")
        return math.floor(value)
    if t.endswith("Z"):
        t = t[:-1] + "+00:00"
    dt = datetime.fromisoformat(t)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return math.floor(dt.timestamp())


def _skip_preamble(stream: IO[str]) -> Iterator[str]:
    lines = iter(stream)
    for line in lines:
        if not line.startswith("#"):
            yield line
            break
    yield from lines


def _reader(stream: IO[str], required: tuple[str, ...]) -> csv.DictReader:
    try:
        reader = csv.DictReader(_skip_preamble(stream))
        header = reader.fieldnames
    except (UnicodeDecodeError, csv.Error) as exc:
        raise IngestError(f"unreadable log stream: {exc}") from exc
    if header is None:
        raise IngestError("empty log stream (no header line)")
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"log header lacks columns {missing}; got {header}")
    return reader


def _rows(reader: csv.DictReader, stats: IngestStats) -> Iterator[dict]:
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except UnicodeDecodeError as exc:
            raise IngestError(f"unreadable log stream: {exc}") from exc
        except csv.Error:
            stats.records_read += 1
            stats.drop("malformed")
            continue
        stats.records_read += 1
        yield row


def _bounds(window: StudyWindow | None, tz: timezone) -> tuple[float, float]:
    if window is None:
        return -math.inf, math.inf
    return window.bounds(tz)


def iter_search_log(
    stream: IO[str],
    salt: str,
    stats: IngestStats,
    window: StudyWindow | None = None,
    tz: timezone = DEFAULT_TZ,
) -> Iterator[SearchLogRecord]:
    """Stream search records; ``stats`` is updated as records are consumed."""
    if not salt:
        raise SaltError("refusing to ingest without a salt")
    lo, hi = _bounds(window, tz)
    for row in _rows(_reader(stream, SEARCH_COLUMNS), stats):
        raw_id, ts_text, query = row.get("user_id"), row.get("timestamp"), row.get("query")
        if not raw_id or ts_text is None or query is None or None in row:
            stats.drop("malformed")
            continue
        try:
            ts = parse_timestamp(ts_text)
        except (ValueError, OverflowError):
            stats.drop("malformed")
            continue
        if not lo <= ts < hi:
            stats.drop("out_of_window")
            continue
        if not normalize_query(query):
            stats.drop("empty_query")
            continue
        stats.records_kept += 1
        yield SearchLogRecord(pseudonymize(raw_id, salt), ts, query)


def _parse_consent(text: str | None) -> bool | None:
    if text is None:
        return None
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    return None


def iter_location_log(
    stream: IO[str],
    salt: str,
    stats: IngestStats,
    window: StudyWindow | None = None,
    coverage: Coverage = JAPAN,
    tz: timezone = DEFAULT_TZ,
) -> Iterator[LocationFix]:
    """Stream consented location fixes; every other fix is dropped and counted."""
    if not salt:
        raise SaltError("refusing to ingest without a salt")
    lo, hi = _bounds(window, tz)
    for row in _rows(_reader(stream, LOCATION_COLUMNS), stats):
        raw_id = row.get("user_id")
        consent = _parse_consent(row.get("consent"))
        if not raw_id or consent is None or None in row or row.get("timestamp") is None:
            stats.drop("malformed")
            continue
        try:
            ts = parse_timestamp(row["timestamp"])
            lat = float(row["lat"])
            lon = float(row["lon"])
        except (TypeError, ValueError, OverflowError):
            stats.drop("malformed")
            continue
        if not lo <= ts < hi:
            stats.drop("out_of_window")
            continue
        if not consent:
            stats.drop("no_consent")
            continue
        if not (math.isfinite(lat) and math.isfinite(lon)) or abs(lat) > 90 or abs(lon) > 180:
            stats.drop("bad_coordinate")
            continue
        if not coverage.contains(lat, lon):
            stats.drop("out_of_coverage")
            continue
        stats.records_kept += 1
        yield LocationFix(pseudonymize(raw_id, salt), ts, lat, lon, True)


def parse_search_log(stream: IO[str], salt: str, **kwargs) -> tuple[list[SearchLogRecord], IngestStats]:
    stats = IngestStats()
    return list(iter_search_log(stream, salt, stats, **kwargs)), stats


def parse_location_log(stream: IO[str], salt: str, **kwargs) -> tuple[list[LocationFix], IngestStats]:
    stats = IngestStats()
    return list(iter_location_log(stream, salt, stats, **kwargs)), stats


def write_search_log(records, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SEARCH_COLUMNS)
    for r in records:
        w.writerow((r.user, r.timestamp, r.query))


def write_location_log(fixes, stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(LOCATION_COLUMNS)
    for f in fixes:
        w.writerow((f.user, f.timestamp, repr(f.lat), repr(f.lon), "true" if f.consent else "false"))


def open_log(path) -> IO[str]:
    """Open a log for streaming; decode errors surface as :class:`IngestError`."""
    try:
        return io.open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot open {path}: {exc}") from exc
