"""Benchmark the numba kernel against the pure-numpy interpreter.

The hot kernel everywhere in this package is "evaluate a stack of compiled
expression programs over a large point batch" (grid jet norms, uniqueness
scans, sphere minima, locus sweeps).  This script times both engines on
representative workloads and prints a table.

Run:  python3 benchmarks/bench_backends.py
"""

import time

import numpy as np

from msl import parse
from msl.backend import HAVE_NUMBA
from msl.jets import CompactBox, ck_norm_over


def time_engine(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_raw_eval(rows):
    e = parse("exp(-x1^2-x2^2)*sin(x1)*cos(x2)+x1^2/(1+x2^2)", 2)
    for m in (10_000, 200_000, 2_000_000):
        pts = np.random.default_rng(0).uniform(-2, 2, (m, 2))
        e.eval_many(pts[:128])  # warm both paths
        t_np = time_engine(lambda: e.eval_many(pts, engine="numpy"))
        if HAVE_NUMBA:
            e.eval_many(pts[:128], engine="numba")
            t_nb = time_engine(lambda: e.eval_many(pts, engine="numba"))
        else:
            t_nb = float("nan")
        rows.append((f"batch eval, {m:>9,} pts", t_np, t_nb))


def bench_jet_norm(rows):
    e = parse("exp(-x1^2)*sin(x1)+0.25*x2^2-x3^2+x1*x2*x3", 3)
    box = CompactBox(lower=[-1.0] * 3, upper=[1.0] * 3, samples_per_axis=41)
    box.grid()
    ck_norm_over(e, box, 2, engine="numpy")
    t_np = time_engine(lambda: ck_norm_over(e, box, 2, engine="numpy"), repeats=3)
    if HAVE_NUMBA:
        ck_norm_over(e, box, 2, engine="numba")
        t_nb = time_engine(lambda: ck_norm_over(e, box, 2, engine="numba"), repeats=3)
    else:
        t_nb = float("nan")
    rows.append(("C^2 norm, 41^3 grid, 3d", t_np, t_nb))


def bench_uniqueness_scan(rows):
    import os

    from msl.critical import ModelQuadratic, certify_unique

    g = parse("x1^2+x2^2+x3^2-x4^2+0.005*x1-0.003*x2*x3", 4)
    model = ModelQuadratic((0, 0, 0, 1))

    def run_with(engine):
        prev = os.environ.get("MSL_BACKEND")
        # certify_unique uses the default engine; route through run_program's
        # engine choice by swapping the module default temporarily
        from msl import backend

        old = backend._DEFAULT_ENGINE
        backend._DEFAULT_ENGINE = engine
        try:
            certify_unique(g, model, 0.6)
        finally:
            backend._DEFAULT_ENGINE = old

    run_with("numpy")
    t_np = time_engine(lambda: run_with("numpy"), repeats=3)
    if HAVE_NUMBA:
        run_with("numba")
        t_nb = time_engine(lambda: run_with("numba"), repeats=3)
    else:
        t_nb = float("nan")
    rows.append(("uniqueness scan, 4d ball", t_np, t_nb))


def main():
    rows = []
    bench_raw_eval(rows)
    bench_jet_norm(rows)
    bench_uniqueness_scan(rows)
    print(f"\nnumba available: {HAVE_NUMBA}")
    print(f"{'workload':<28} {'numpy':>10} {'numba':>10} {'speedup':>9}")
    for name, t_np, t_nb in rows:
        speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:<28} {t_np * 1e3:>8.1f}ms {t_nb * 1e3:>8.1f}ms {speed:>8.1f}x")


if __name__ == "__main__":
    main()
