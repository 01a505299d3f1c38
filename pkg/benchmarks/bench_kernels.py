"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call of each kernel includes compilation (cached on disk
afterwards) and is reported separately.
"""
import argparse
import time

import numpy as np

from imexglm import kernels
from imexglm.tableau import load_method


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_recurrence(repeat):
    rng = np.random.default_rng(0)
    M = np.array([[0.5, 1.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, -1.0]])
    deltas = rng.standard_normal((2**16, 3)) * 1e-6
    t0 = time.perf_counter()
    kernels.recurrence_norms(M, deltas, use_numba=True)
    first = time.perf_counter() - t0
    t_nb, a = best_of(lambda: kernels.recurrence_norms(M, deltas, use_numba=True), repeat)
    t_np, b = best_of(lambda: kernels.recurrence_norms(M, deltas, use_numba=False), repeat)
    assert np.allclose(a, b, rtol=1e-12, atol=0.0)
    return "recurrence (2^16 steps, d=3)", first, t_nb, t_np


def bench_grid(repeat):
    t = load_method("imex-glm-p2").implicit
    re, im = np.meshgrid(np.linspace(-50, 5, 200), np.linspace(-20, 20, 100), indexing="ij")
    zs = (re + 1j * im).ravel()
    t0 = time.perf_counter()
    kernels.stability_grid(t.A, t.U, t.B, t.V, zs, use_numba=True)
    first = time.perf_counter() - t0
    t_nb, a = best_of(lambda: kernels.stability_grid(t.A, t.U, t.B, t.V, zs, use_numba=True), repeat)
    t_np, b = best_of(lambda: kernels.stability_grid(t.A, t.U, t.B, t.V, zs, use_numba=False), repeat)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-14, equal_nan=True)
    return "stability grid (200 x 100, s=2)", first, t_nb, t_np


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not kernels.numba_enabled():
        print("numba disabled (GLM_DISABLE_NUMBA set or numba missing); nothing to compare")
        return
    print(f"{'kernel':34} {'first call':>11} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for bench in (bench_recurrence, bench_grid):
        name, first, t_nb, t_np = bench(args.repeat)
        print(f"{name:34} {first:10.4f}s {t_nb:9.5f}s {t_np:9.5f}s {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
