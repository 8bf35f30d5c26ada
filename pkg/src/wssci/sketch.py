"""HyperLogLog distinct counter used by the counter's sketch mode."""

from __future__ import annotations

import base64
import hashlib
import math
from typing import Iterable

import numpy as np

from . import _kernels

_HEX = frozenset("0123456789abcdef")


def hash_token(token: str) -> int:
    """64-bit hash of a user token.

    Pseudonymized tokens are already uniform hex digests, so their leading
    16 hex digits are used directly; anything else is hashed with SHA-256.
    """
    if len(token) >= 16 and set(token[:16]) <= _HEX:
        return int(token[:16], 16)
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")


class HyperLogLog:
    """Mergeable cardinality sketch with ``2**precision`` one-byte registers.

    Relative standard error is about ``1.04 / sqrt(2**precision)``; small
    cardinalities are estimated by linear counting and are near-exact.
    """

    def __init__(self, precision: int = 10, registers: np.ndarray | None = None):
        if not 4 <= precision <= 16:
            raise ValueError(f"precision must be in 4..16, got {precision}")
        self.precision = precision
        m = 1 << precision
        if registers is None:
            registers = np.zeros(m, dtype=np.uint8)
        elif registers.shape != (m,):
            raise ValueError(f"expected {m} registers, got {registers.shape}")
        self.registers = registers

    def add(self, token: str) -> None:
        self.add_hashes(np.array([hash_token(token)], dtype=np.uint64))

    def update(self, tokens: Iterable[str]) -> None:
        self.add_hashes(np.fromiter((hash_token(t) for t in tokens), dtype=np.uint64))

    def add_hashes(self, hashes: np.ndarray) -> None:
        _kernels.hll_update(self.registers, hashes, self.precision)

    @property
    def standard_error(self) -> float:
        return 1.04 / math.sqrt(1 << self.precision)

    def count(self) -> int:
        m = 1 << self.precision
        regs = self.registers.astype(np.float64)
        if m == 16:
            alpha = 0.673
        elif m == 32:
            alpha = 0.697
        elif m == 64:
            alpha = 0.709
        else:
            alpha = 0.7213 / (1.0 + 1.079 / m)
        raw = alpha * m * m / float(np.sum(np.exp2(-regs)))
        zeros = int(np.count_nonzero(self.registers == 0))
        if raw <= 2.5 * m and zeros:
            return int(round(m * math.log(m / zeros)))
        return int(round(raw))

    def merge(self, other: "HyperLogLog") -> "HyperLogLog":
        if other.precision != self.precision:
            raise ValueError(f"cannot merge sketches of precision {self.precision} and {other.precision}")
        return HyperLogLog(self.precision, np.maximum(self.registers, other.registers))

    def copy(self) -> "HyperLogLog":
        return HyperLogLog(self.precision, self.registers.copy())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, HyperLogLog)
            and self.precision == other.precision
            and bool(np.array_equal(self.registers, other.registers))
        )

    def to_text(self) -> str:
        return base64.b64encode(self.registers.tobytes()).decode("ascii")

    @classmethod
    def from_text(cls, text: str, precision: int) -> "HyperLogLog":
        regs = np.frombuffer(base64.b64decode(text), dtype=np.uint8).copy()
        return cls(precision, regs)
