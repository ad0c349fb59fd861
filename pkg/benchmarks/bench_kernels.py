"""Timing comparison of the numba kernels against their numpy fallbacks.

Run directly:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from habitdual import _kernels
from habitdual._backend import NUMBA_ENABLED


def timeit(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_thomas(n=561, batches=2000):
    rng = np.random.default_rng(0)
    lo = -rng.uniform(0.1, 0.3, n)
    up = -rng.uniform(0.1, 0.3, n)
    di = 1.0 + np.abs(lo) + np.abs(up)
    rhs = rng.standard_normal(n)

    def run(fn):
        for _ in range(batches):
            fn(lo, di, up, rhs)

    return {"numpy": timeit(run, _kernels._thomas_numpy)} | (
        {"numba": timeit(run, _kernels._thomas_numba)} if NUMBA_ENABLED else {}
    )


def bench_psor(n=561, batches=50):
    rng = np.random.default_rng(1)
    lo = np.full(n, -0.2)
    up = np.full(n, -0.2)
    di = np.full(n, 1.5)
    rhs = rng.standard_normal(n)

    def run(fn):
        for _ in range(batches):
            w = np.maximum(rhs, 0.0)
            fn(lo, di, up, rhs, w, 1.5, 1e-10, 500)

    return {"numpy": timeit(run, _kernels._psor_numpy)} | (
        {"numba": timeit(run, _kernels._psor_numba)} if NUMBA_ENABLED else {}
    )


def bench_policy_lookup(n_paths=200000, n_h=40, nm=561):
    rng = np.random.default_rng(2)
    x_rows = np.cumsum(rng.uniform(0.01, 0.05, (n_h, nm)), axis=1)
    val_rows = rng.standard_normal((2, n_h, nm))
    x = rng.uniform(1.0, 10.0, n_paths)
    k_idx = rng.integers(0, n_h - 1, n_paths)
    wh = rng.uniform(0.0, 1.0, n_paths)
    args = (x, k_idx, wh, x_rows, val_rows)
    out = {"numpy": timeit(_kernels._policy_lookup_numpy, *args)}
    if NUMBA_ENABLED:
        _kernels._policy_lookup_numba(*args)  # compile
        out["numba"] = timeit(_kernels._policy_lookup_numba, *args)
    return out


def main():
    if NUMBA_ENABLED:
        # trigger compilation outside the timed region
        n = 8
        _kernels._thomas_numba(np.zeros(n), np.ones(n), np.zeros(n), np.ones(n))
        _kernels._psor_numba(
            np.zeros(n), np.ones(n), np.zeros(n), np.ones(n), np.zeros(n), 1.5, 1e-10, 10
        )
    for name, bench in (
        ("thomas (561 x 2000 solves)", bench_thomas),
        ("psor (561 x 50 solves)", bench_psor),
        ("policy_lookup (2e5 paths)", bench_policy_lookup),
    ):
        res = bench()
        line = f"{name:34s} " + "  ".join(f"{k}={v * 1e3:8.2f} ms" for k, v in res.items())
        if "numba" in res and res["numba"] > 0:
            line += f"  speedup={res['numpy'] / res['numba']:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()
