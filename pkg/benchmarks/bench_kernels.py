"""Benchmark the numba kernels against their pure-numpy reference.

Both backends are imported directly (the CANOPY_METRICS_BACKEND dispatch
is bypassed), the numba functions are warmed up once to exclude compile
time, and each kernel runs on identical seeded inputs.

Run: python3 benchmarks/bench_kernels.py --size 512 --repeats 5
"""

import argparse
import time

import numpy as np

from canopy_metrics.heatmap import build_filter_bank
from canopy_metrics.kernels import numpy_backend as npk

try:
    from canopy_metrics.kernels import numba_backend as nbk
except ImportError:
    nbk = None


def time_calls(func, args_list, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for args in args_list:
            func(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1000.0


def build_cases(size, rng):
    n_peaks = max(4, size // 32)
    rows = rng.integers(0, size, size=n_peaks).astype(np.int64)
    cols = rng.integers(0, size, size=n_peaks).astype(np.int64)
    sigmas = rng.uniform(1.0, 8.0, size=n_peaks)
    values = rng.random((size, size))
    bank = build_filter_bank()
    # ~40 instances: the numpy majority filter scans one integral image
    # per label id, so its cost grows with the instance count while the
    # numba window scan does not
    labels = rng.integers(0, 40, size=(size, size)).astype(np.int64)
    qr = rng.integers(0, size, size=size * 4).astype(np.int64)
    qc = rng.integers(0, size, size=size * 4).astype(np.int64)
    cr = rng.integers(0, size, size=12).astype(np.int64)
    cc = rng.integers(0, size, size=12).astype(np.int64)
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=7))
    poly_x = 0.4 * size * np.cos(ang) * 0.1
    poly_y = 0.4 * size * np.sin(ang) * 0.1

    return {
        "splat_gaussian_max": [
            (np.zeros((size, size)), rows, cols, sigmas) for _ in range(3)
        ],
        "window_peak_mask": [(values, 11, 0.6)],
        "zncc_best": [(values, rows, cols, bank.kernels, bank.window // 2)],
        "point_in_polygon_mask": [
            (poly_x, poly_y, size, size, -0.05 * size, -0.05 * size, 0.1)
        ],
        "majority_filter_labels": [(labels, 23)],
        "nearest_candidate": [(qr, qc, cr, cc)],
    }


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=512, help="raster side length")
    parser.add_argument("--repeats", type=int, default=5, help="best-of repeats")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if nbk is None:
        print("numba is not installed; nothing to compare")
        return

    rng = np.random.default_rng(args.seed)
    cases = build_cases(args.size, rng)

    # warm up: first call of each numba kernel pays the compile cost
    for name, args_list in cases.items():
        getattr(nbk, name)(*args_list[0])

    header = f"{'kernel':<24} {'numpy ms':>10} {'numba ms':>10} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, args_list in cases.items():
        t_np = time_calls(getattr(npk, name), args_list, args.repeats)
        t_nb = time_calls(getattr(nbk, name), args_list, args.repeats)
        print(
            f"{name:<24} {t_np:>10.3f} {t_nb:>10.3f} "
            f"{t_np / max(t_nb, 1e-9):>8.1f}x"
        )


if __name__ == "__main__":
    main()
