"""Compare the numba and pure-numpy kernels on identical inputs.

Usage: python3 benchmarks/bench_kernels.py [--n 1000000] [--repeat 5]
"""

import argparse
import time

import numpy as np

from wssci import _kernels
from wssci._accel import HAS_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--precision", type=int, default=10)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    lats = rng.uniform(20.0, 46.0, args.n)
    lons = rng.uniform(122.0, 154.0, args.n)
    hashes = rng.integers(0, 2**63, args.n, dtype=np.int64).astype(np.uint64) * np.uint64(2)
    m = 1 << args.precision

    cases = {
        "encode_half_grid_batch": (
            lambda: _kernels.encode_half_grid_batch_numpy(lats, lons),
            lambda: _kernels.encode_half_grid_batch_numba(lats, lons),
        ),
        "hll_update": (
            lambda: _kernels.hll_update_numpy(np.zeros(m, np.uint8), hashes, args.precision),
            lambda: _kernels.hll_update_numba(np.zeros(m, np.uint8), hashes, args.precision),
        ),
    }
    print(f"n={args.n} repeat={args.repeat} numba_available={HAS_NUMBA}")
    print(f"{'kernel':<24} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, (np_fn, nb_fn) in cases.items():
        ref = np_fn()
        if HAS_NUMBA:
            out = nb_fn()  # also triggers compilation outside the timed loop
            if not np.array_equal(ref, out):
                raise SystemExit(f"{name}: backends disagree")
            t_nb = best_of(nb_fn, args.repeat)
        else:
            t_nb = float("nan")
        t_np = best_of(np_fn, args.repeat)
        print(f"{name:<24} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
