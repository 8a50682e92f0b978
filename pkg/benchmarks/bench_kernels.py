"""Benchmark the JIT kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py
The numpy path is what you get with CTXFUSE_DISABLE_NUMBA=1.
"""

import time

import numpy as np

from ctxfuse.kernels import (
    USING_NUMBA,
    _logistic_terms_via_jit,
    _pair_cosine_lag_stats_via_jit,
    logistic_terms_numpy,
    pair_cosine_lag_stats_numpy,
)


def timeit(fn, *args, repeats=5):
    fn(*args)  # warmup (JIT compile / cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_logistic_terms(n=200_000):
    rng = np.random.default_rng(0)
    z = rng.normal(size=n)
    ys = np.where(rng.random(n) > 0.5, 1.0, -1.0)
    wts = rng.uniform(0.5, 2.0, size=n)

    t_np = timeit(logistic_terms_numpy, z, ys, wts)
    loss_np, r_np = logistic_terms_numpy(z, ys, wts)
    rows = [("numpy", t_np)]
    if USING_NUMBA:
        t_nb = timeit(_logistic_terms_via_jit, z, ys, wts)
        loss_nb, r_nb = _logistic_terms_via_jit(z, ys, wts)
        assert abs(loss_np - loss_nb) <= 1e-9 * max(1.0, abs(loss_np))
        assert np.allclose(r_np, r_nb, atol=1e-12)
        rows.append(("numba", t_nb))
    report(f"logistic loss terms (n={n})", rows, n)


def bench_pair_cosine(n=500):
    rng = np.random.default_rng(1)
    xyz = rng.normal(size=(n, 3))
    times = np.sort(rng.uniform(0, 20, size=n))
    edges = np.array([0.0, 0.5, 1.0, 5.0, 10.0, np.inf])

    t_np = timeit(pair_cosine_lag_stats_numpy, xyz, times, edges)
    s_np, c_np = pair_cosine_lag_stats_numpy(xyz, times, edges)
    rows = [("numpy", t_np)]
    if USING_NUMBA:
        t_nb = timeit(_pair_cosine_lag_stats_via_jit, xyz, times, edges)
        s_nb, c_nb = _pair_cosine_lag_stats_via_jit(xyz, times, edges)
        assert np.array_equal(c_np, c_nb)
        assert np.allclose(s_np, s_nb, atol=1e-9)
        rows.append(("numba", t_nb))
    report(f"pairwise direction cosines (n={n}, {n*(n-1)//2} pairs)", rows, n * (n - 1) // 2)


def report(title, rows, n_items):
    print(f"\n{title}")
    base = rows[0][1]
    for name, t in rows:
        speedup = base / t
        print(f"  {name:6s} {t * 1e3:9.3f} ms   {n_items / t / 1e6:8.1f} M items/s   x{speedup:.1f}")


if __name__ == "__main__":
    print(f"numba path active: {USING_NUMBA}")
    bench_logistic_terms()
    bench_pair_cosine()
