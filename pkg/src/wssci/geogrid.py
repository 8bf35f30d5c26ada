"""Japanese standard grid-square (mesh) codes down to the 500 m half grid.

Codes are digit strings::

    PPUU RC rc q
    |    |  |  `- quadrant of the 1 km square: 1=SW 2=SE 3=NW 4=NE
    |    |  `---- third mesh row/col (0-9), 30" x 45"
    |    `------- second mesh row/col (0-7), 5' x 7.5'
    `------------ first mesh: floor(lat * 1.5), floor(lon) - 100

All arithmetic runs on integer half-grid indices (``floor(lat * 240)`` and
``floor(lon * 160)``) so every cell edge is an exact rational. A point
belongs to the cell whose decoded float box satisfies
``south <= lat < north`` and ``west <= lon < east``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from . import _kernels
from ._kernels import FIRST_SPAN, LAT_CELLS_PER_DEG, LON_CELLS_PER_DEG, SECOND_SPAN, THIRD_SPAN


class GridError(ValueError):
    pass


class OutOfCoverageError(GridError):
    pass


class MalformedCodeError(GridError):
    pass


class GridLevel(enum.Enum):
    SECOND = "second"
    THIRD = "third"
    HALF = "half"

    @property
    def digits(self) -> int:
        return _DIGITS[self]

    @property
    def half_cells(self) -> tuple[int, int]:
        """(rows, cols) of half grids covered by one cell of this level."""
        return _HALF_CELLS[self]

    @classmethod
    def from_digits(cls, n: int) -> "GridLevel":
        for level, d in _DIGITS.items():
            if d == n:
                return level
        raise MalformedCodeError(f"no grid level has {n}-digit codes")


_DIGITS = {GridLevel.SECOND: 6, GridLevel.THIRD: 8, GridLevel.HALF: 9}
_HALF_CELLS = {GridLevel.SECOND: (20, 20), GridLevel.THIRD: (2, 2), GridLevel.HALF: (1, 1)}


@dataclass(frozen=True)
class BoundingBox:
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self):
        if not (self.south < self.north and self.west < self.east):
            raise ValueError(f"degenerate box {self}")

    def contains(self, lat: float, lon: float) -> bool:
        return self.south <= lat < self.north and self.west <= lon < self.east

    def encloses(self, other: "BoundingBox") -> bool:
        return (
            self.south <= other.south
            and self.west <= other.west
            and other.north <= self.north
            and other.east <= self.east
        )

    @property
    def center(self) -> tuple[float, float]:
        return (self.south + self.north) / 2, (self.west + self.east) / 2


@dataclass(frozen=True)
class Coverage:
    """Window of admissible coordinates (half-open on north and east)."""

    south: float = 20.0
    west: float = 122.0
    north: float = 46.0
    east: float = 154.0

    def __post_init__(self):
        if not (self.south < self.north and self.west < self.east):
            raise ValueError(f"empty coverage window {self}")
        # Two-digit first-mesh fields only exist for 0 <= lat < 66.67 and 100 <= lon < 200.
        if self.south < 0 or self.north > 200 / 3 or self.west < 100 or self.east > 200:
            raise ValueError(f"coverage window {self} exceeds the encodable mesh range")

    def contains(self, lat: float, lon: float) -> bool:
        return self.south <= lat < self.north and self.west <= lon < self.east

    @classmethod
    def parse(cls, text: str) -> "Coverage":
        """Parse ``south,west,north,east``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"coverage needs 4 comma-separated values, got {text!r}")
        return cls(*(float(p) for p in parts))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.south, self.west, self.north, self.east)


JAPAN = Coverage()


def _half_index(value: float, per_deg: int) -> int:
    k = math.floor(value * per_deg)
    if value < k / per_deg:
        k -= 1
    elif value >= (k + 1) / per_deg:
        k += 1
    return k


def _compose(j: int, i: int) -> str:
    p, rl = divmod(j, FIRST_SPAN)
    u, rc = divmod(i, FIRST_SPAN)
    r2, rl = divmod(rl, SECOND_SPAN)
    c2, rc = divmod(rc, SECOND_SPAN)
    r3, hr = divmod(rl, THIRD_SPAN)
    c3, hc = divmod(rc, THIRD_SPAN)
    return f"{p:02d}{u - 100:02d}{r2}{c2}{r3}{c3}{1 + hc + 2 * hr}"


def encode_half_grid(lat: float, lon: float, coverage: Coverage = JAPAN) -> str:
    """Return the 9-digit half-grid code of the cell containing ``(lat, lon)``."""
    if not (math.isfinite(lat) and math.isfinite(lon)) or not coverage.contains(lat, lon):
        raise OutOfCoverageError(f"({lat}, {lon}) is outside coverage {coverage.as_tuple()}")
    return _compose(_half_index(lat, LAT_CELLS_PER_DEG), _half_index(lon, LON_CELLS_PER_DEG))


def encode_half_grid_many(lats: Sequence[float], lons: Sequence[float], coverage: Coverage = JAPAN) -> list[str]:
    """Vectorized :func:`encode_half_grid`; raises if any point is out of coverage."""
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    if lats.shape != lons.shape or lats.ndim != 1:
        raise ValueError("lats and lons must be 1-d arrays of equal length")
    inside = (lats >= coverage.south) & (lats < coverage.north) & (lons >= coverage.west) & (lons < coverage.east)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise OutOfCoverageError(f"point {bad} ({lats[bad]}, {lons[bad]}) is outside coverage")
    codes = _kernels.encode_half_grid_batch(lats, lons)
    return [f"{c:09d}" for c in codes.tolist()]


def _parse(code: str) -> tuple[int, int, GridLevel]:
    """Map a 6/8/9-digit code to the half-grid index of its SW corner."""
    if not isinstance(code, str) or not code.isascii() or not code.isdigit():
        raise MalformedCodeError(f"grid code must be a digit string, got {code!r}")
    level = GridLevel.from_digits(len(code))
    p, u = int(code[0:2]), int(code[2:4])
    r2, c2 = int(code[4]), int(code[5])
    if r2 > 7 or c2 > 7:
        raise MalformedCodeError(f"second-mesh digits must be 0-7 in {code!r}")
    j = p * FIRST_SPAN + r2 * SECOND_SPAN
    i = (u + 100) * FIRST_SPAN + c2 * SECOND_SPAN
    if level is GridLevel.SECOND:
        return j, i, level
    j += int(code[6]) * THIRD_SPAN
    i += int(code[7]) * THIRD_SPAN
    if level is GridLevel.THIRD:
        return j, i, level
    q = int(code[8])
    if not 1 <= q <= 4:
        raise MalformedCodeError(f"quadrant digit must be 1-4 in {code!r}")
    j += (q - 1) // 2
    i += (q - 1) % 2
    return j, i, level


def _box(j: int, i: int, level: GridLevel) -> BoundingBox:
    rows, cols = level.half_cells
    return BoundingBox(
        south=j / LAT_CELLS_PER_DEG,
        west=i / LON_CELLS_PER_DEG,
        north=(j + rows) / LAT_CELLS_PER_DEG,
        east=(i + cols) / LON_CELLS_PER_DEG,
    )


def decode_half_grid(code: str) -> BoundingBox:
    """Bounding box of a 9-digit half-grid code."""
    if not isinstance(code, str) or len(code) != 9:
        raise MalformedCodeError(f"half-grid codes have 9 digits, got {code!r}")
    return _box(*_parse(code))


def decode_block(code: str) -> BoundingBox:
    """Bounding box of a second (6), third (8) or half (9) digit code."""
    return _box(*_parse(code))


def level_of(code: str) -> GridLevel:
    return _parse(code)[2]


def truncate_to_level(code: str, level: GridLevel) -> str:
    if len(code) < level.digits:
        raise GridError(f"cannot refine {code!r} to the {level.value} level")
    return code[: level.digits]


def half_grids_in(code: str) -> Iterator[str]:
    """Enumerate every half-grid code inside a block code."""
    j0, i0, level = _parse(code)
    rows, cols = level.half_cells
    for dj in range(rows):
        for di in range(cols):
            yield _compose(j0 + dj, i0 + di)


def neighbor(code: str, d_row: int, d_col: int) -> str:
    """Half-grid code offset by whole cells north (``d_row``) and east (``d_col``)."""
    j, i, level = _parse(code)
    if level is not GridLevel.HALF:
        raise GridError("neighbor() works on half-grid codes")
    return _compose(j + d_row, i + d_col)
