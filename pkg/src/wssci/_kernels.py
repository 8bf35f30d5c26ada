"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public names (``encode_half_grid_batch``, ``hll_update``) resolve to the
numba variant unless numba is unavailable or disabled via
``WSSCI_DISABLE_NUMBA``. Both variants stay importable so tests and the
benchmark can compare them directly.
"""

from __future__ import annotations

import numpy as np

from ._accel import HAS_NUMBA, njit

# Half-grid cell counts per degree: 15" of latitude, 22.5" of longitude.
LAT_CELLS_PER_DEG = 240
LON_CELLS_PER_DEG = 160
# Half cells per first-mesh square along each axis (40' lat, 1 deg lon).
FIRST_SPAN = 160
SECOND_SPAN = 20
THIRD_SPAN = 2


def _half_index_numpy(values: np.ndarray, per_deg: int) -> np.ndarray:
    # Cell k is the one with float(k/per_deg) <= v < float((k+1)/per_deg).
    idx = np.floor(values * per_deg).astype(np.int64)
    idx = np.where(values < idx / per_deg, idx - 1, idx)
    idx = np.where(values >= (idx + 1) / per_deg, idx + 1, idx)
    return idx


def _compose_numpy(j: np.ndarray, i: np.ndarray) -> np.ndarray:
    p, rem_lat = np.divmod(j, FIRST_SPAN)
    u, rem_lon = np.divmod(i, FIRST_SPAN)
    r2, rem_lat = np.divmod(rem_lat, SECOND_SPAN)
    c2, rem_lon = np.divmod(rem_lon, SECOND_SPAN)
    r3, hr = np.divmod(rem_lat, THIRD_SPAN)
    c3, hc = np.divmod(rem_lon, THIRD_SPAN)
    q = 1 + hc + 2 * hr
    return p * 10_000_000 + (u - 100) * 100_000 + r2 * 10_000 + c2 * 1_000 + r3 * 100 + c3 * 10 + q


def encode_half_grid_batch_numpy(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    j = _half_index_numpy(lats, LAT_CELLS_PER_DEG)
    i = _half_index_numpy(lons, LON_CELLS_PER_DEG)
    return _compose_numpy(j, i)


@njit(cache=True)
def _half_index_scalar(v, per_deg):
    k = np.int64(np.floor(v * per_deg))
    if v < k / per_deg:
        k -= 1
    elif v >= (k + 1) / per_deg:
        k += 1
    return k


@njit(cache=True)
def _encode_half_grid_batch_jit(lats, lons, out):
    for n in range(lats.shape[0]):
        j = _half_index_scalar(lats[n], 240)
        i = _half_index_scalar(lons[n], 160)
        p = j // 160
        rl = j - p * 160
        u = i // 160
        rc = i - u * 160
        r2 = rl // 20
        c2 = rc // 20
        rl -= r2 * 20
        rc -= c2 * 20
        r3 = rl // 2
        c3 = rc // 2
        q = 1 + (rc - c3 * 2) + 2 * (rl - r3 * 2)
        out[n] = p * 10000000 + (u - 100) * 100000 + r2 * 10000 + c2 * 1000 + r3 * 100 + c3 * 10 + q
    return out


def encode_half_grid_batch_numba(lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    lats = np.ascontiguousarray(lats, dtype=np.float64)
    lons = np.ascontiguousarray(lons, dtype=np.float64)
    out = np.empty(lats.shape[0], dtype=np.int64)
    return _encode_half_grid_batch_jit(lats, lons, out)


def _bit_length_u64(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    bl = np.zeros(x.shape, dtype=np.int64)
    for s in (32, 16, 8, 4, 2, 1):
        t = x >> np.uint64(s)
        m = t != 0
        bl += m.astype(np.int64) * s
        x = np.where(m, t, x)
    bl += (x != 0).astype(np.int64)
    return bl


def hll_update_numpy(registers: np.ndarray, hashes: np.ndarray, p: int) -> np.ndarray:
    """Fold 64-bit hashes into HyperLogLog ``registers`` in place."""
    hashes = np.asarray(hashes, dtype=np.uint64)
    if hashes.size == 0:
        return registers
    idx = (hashes >> np.uint64(64 - p)).astype(np.int64)
    rest = hashes & np.uint64((1 << (64 - p)) - 1)
    rho = (64 - p) - _bit_length_u64(rest) + 1
    np.maximum.at(registers, idx, rho.astype(registers.dtype))
    return registers


@njit(cache=True)
def _hll_update_jit(registers, hashes, p):
    width = 64 - p
    for n in range(hashes.shape[0]):
        h = hashes[n]
        idx = np.int64(h >> np.uint64(width))
        rest = h & ((np.uint64(1) << np.uint64(width)) - np.uint64(1))
        rho = 1
        bit = np.uint64(1) << np.uint64(width - 1)
        while rho <= width and (rest & bit) == 0:
            rho += 1
            bit = bit >> np.uint64(1)
        if rho > registers[idx]:
            registers[idx] = rho
    return registers


def hll_update_numba(registers: np.ndarray, hashes: np.ndarray, p: int) -> np.ndarray:
    hashes = np.ascontiguousarray(hashes, dtype=np.uint64)
    return _hll_update_jit(registers, hashes, p)


if HAS_NUMBA:
    encode_half_grid_batch = encode_half_grid_batch_numba
    hll_update = hll_update_numba
else:
    encode_half_grid_batch = encode_half_grid_batch_numpy
    hll_update = hll_update_numpy
