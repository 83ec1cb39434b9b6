#!/usr/bin/env python3
"""Timing comparison of the numba and pure-numpy kernel backends.

Run:  python benchmarks/bench_kernels.py [--rows 8000] [--trees 10] [--repeat 3]

Both backends are imported directly (the MOODSENSE_NUMBA env flag only picks
what the package itself uses), results are checked for agreement, and the
best-of-N wall times are printed side by side.
"""

import argparse
import time

import numpy as np
from numpy.polynomial.hermite import hermgauss

from moodsense.kernels import _numpy_backend as np_backend
from moodsense.kernels._rng import bulk_values, derive_seed

try:
    from moodsense.kernels import _numba_backend as nb_backend
except ImportError:
    nb_backend = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_forest(args):
    rng = np.random.default_rng(0)
    X = np.ascontiguousarray(rng.normal(size=(args.rows, 8)))
    y = (X[:, 0] + 0.6 * X[:, 1] + rng.normal(0, 1, args.rows) > 0).astype(np.int64)

    def run(backend):
        trees = []
        for t in range(args.trees):
            seed = derive_seed(7, t)
            boot = (bulk_values(derive_seed(seed, 0), args.rows) % np.uint64(args.rows)).astype(np.int64)
            trees.append(
                backend.grow_tree(X, y, boot, 2, 3, 1, 2**31 - 1, np.uint64(derive_seed(seed, 1)))
            )
        return trees

    rows = []
    if nb_backend is not None:
        run(nb_backend)  # one warm-up call pays the JIT cost outside the timing
        t_nb, out_nb = best_of(lambda: run(nb_backend), args.repeat)
        rows.append(("numba", t_nb))
    t_np, out_np = best_of(lambda: run(np_backend), args.repeat)
    rows.append(("numpy", t_np))
    if nb_backend is not None:
        for a, b in zip(out_nb, out_np):
            for xa, xb in zip(a[:5], b[:5]):
                assert np.array_equal(xa, xb), "backend outputs diverge"
    print(f"\nCART forest ({args.trees} trees, {args.rows} rows, 8 features)")
    _table(rows)


def bench_glmm(args):
    rng = np.random.default_rng(1)
    n_groups, per = 17, max(args.rows // 17, 10)
    n = n_groups * per
    X = np.ascontiguousarray(np.column_stack([np.ones(n), rng.normal(size=(n, 3))]))
    beta = np.array([0.3, -0.5, 0.4, 0.1])
    eta = X @ beta + np.repeat(rng.normal(0, 0.9, n_groups), per)
    y = (rng.uniform(size=n) < 1 / (1 + np.exp(-eta))).astype(np.float64)
    starts = np.arange(0, n + 1, per, dtype=np.int64)
    t, w = hermgauss(15)
    logw = np.log(w) + t * t

    def run(backend):
        return backend.glmm_parts(X, y, starts, beta, 0.8, t, logw)

    rows = []
    if nb_backend is not None:
        run(nb_backend)
        t_nb, (ll_nb, _) = best_of(lambda: run(nb_backend), args.repeat)
        rows.append(("numba", t_nb))
    t_np, (ll_np, _) = best_of(lambda: run(np_backend), args.repeat)
    rows.append(("numpy", t_np))
    if nb_backend is not None:
        assert abs(ll_nb - ll_np) < 1e-8 * abs(ll_np)
    print(f"\nGLMM marginal loglik+gradient ({n_groups} groups x {per} obs, Q=15)")
    _table(rows)


def _table(rows):
    base = rows[-1][1]
    for name, t in rows:
        speedup = f"{base / t:5.1f}x vs numpy" if name != "numpy" else ""
        print(f"  {name:<6} {t * 1e3:9.2f} ms  {speedup}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--rows", type=int, default=8000)
    parser.add_argument("--trees", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if nb_backend is None:
        print("numba unavailable: timing the numpy backend only")
    bench_forest(args)
    bench_glmm(args)
