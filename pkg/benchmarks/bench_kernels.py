"""Time the numba and numpy kernel backends on desk-scale tile batches.

    python benchmarks/bench_kernels.py [--tiles 256] [--n 64] [--repeat 5]

Prints one CSV row per (kernel, backend): best-of-``repeat`` wall time in
milliseconds and the speedup over numpy. The numba timings exclude the first
(compiling) call.
"""

import argparse
import csv
import sys
import time

import numpy as np

from xbarprune import kernels
from xbarprune.prune import SparsityLevelSet


def best_time(fn, repeat):
    fn()  # warm-up / JIT
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(T, n, seed=0):
    rng = np.random.default_rng(seed)
    tiles = rng.standard_normal((T, n, n)).astype(np.float32)
    tiles[rng.random(tiles.shape) < 0.3] = 0
    structural = np.zeros(tiles.shape, dtype=bool)
    ncols = np.full(T, n)
    L = SparsityLevelSet(n)
    tau = float(np.quantile(np.abs(tiles), 0.8))
    x = rng.standard_normal((64, 16, 14, 14)).astype(np.float32)
    cols = kernels.im2col(x, 3)
    return {
        "column_hoyer": lambda: kernels.column_hoyer(tiles),
        "column_hoyer_grad": lambda: kernels.column_hoyer_grad(tiles),
        "gated_variance": lambda: kernels.gated_variance(tiles, ncols),
        "prune_tiles": lambda: kernels.prune_tiles(tiles, structural, tau, L.keep_counts, L.levels),
        "im2col": lambda: kernels.im2col(x, 3),
        "col2im": lambda: kernels.col2im(cols, x.shape, 3),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--tiles", type=int, default=256)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    prev = kernels.backend()
    timings = {}
    try:
        for b in kernels.available_backends():
            kernels.set_backend(b)
            for name, fn in cases(args.tiles, args.n).items():
                timings[name, b] = best_time(fn, args.repeat)
    finally:
        kernels.set_backend(prev)
    w = csv.writer(sys.stdout)
    w.writerow(["kernel", "backend", "ms", "speedup_vs_numpy"])
    for (name, b), t in timings.items():
        w.writerow([name, b, f"{t * 1e3:.3f}", f"{timings[name, 'numpy'] / t:.2f}"])


if __name__ == "__main__":
    main()
