#!/usr/bin/env python3
"""Benchmark: compiled kernel core vs pure numpy fallback.

Times the two SMC sweeps on the built-in models across levels and particle
counts, plus one full PIMH chain, and prints a table with the speedup.
Run from the repository root:

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from mlpic import LevelGrid, LqgParams, SivrParams, build_lqg, build_sivr
from mlpic import pimh_single_level, run_coupled_smc, run_smc
from mlpic._kernels import has_compiled
from mlpic.rng import stream


def time_call(fn, min_seconds):
    fn()  # warm up
    n = 0
    t0 = time.perf_counter()
    while time.perf_counter() - t0 < min_seconds:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--quick", action="store_true", help="shorter timing windows")
    args = parser.parse_args()
    window = 0.3 if args.quick else 1.5

    if not has_compiled():
        print("compiled kernels are not built; nothing to compare")
        return

    lqg = build_lqg(LqgParams())
    sivr = build_sivr(SivrParams())
    cases = [
        ("lqg", lqg, 6, 4, 500),
        ("lqg", lqg, 8, 4, 500),
        ("lqg", lqg, 10, 4, 500),
        ("sivr", sivr, 5, 3, 200),
        ("sivr", sivr, 7, 3, 200),
    ]

    print(f"{'case':>24s} {'pure ms':>9s} {'compiled ms':>12s} {'speedup':>8s}")
    for name, prob, l, m, n_p in cases:
        grid = LevelGrid(l, m, prob.horizon)
        for kind, runner in (("smc", run_smc), ("coupled", run_coupled_smc)):
            times = {}
            for backend in ("pure", "compiled"):
                rng = stream(0, "bench", name, kind, backend)
                times[backend] = time_call(
                    lambda: runner(prob, grid, n_p, rng, backend=backend), window)
            label = f"{name} {kind} l={l} Np={n_p}"
            print(f"{label:>24s} {times['pure'] * 1e3:9.2f} "
                  f"{times['compiled'] * 1e3:12.2f} "
                  f"{times['pure'] / times['compiled']:7.1f}x")

    # one full estimator call, dominated by the sweep loop
    grid = LevelGrid(8, 4)
    times = {}
    for backend in ("pure", "compiled"):
        t0 = time.perf_counter()
        est = pimh_single_level(lqg, grid, 200, 300, 30, stream(1, "bench-pimh", backend),
                                backend=backend)
        times[backend] = time.perf_counter() - t0
        assert np.isfinite(est.value[0])
    print(f"{'pimh l=8 300 iters':>24s} {times['pure'] * 1e3:9.0f} "
          f"{times['compiled'] * 1e3:12.0f} {times['pure'] / times['compiled']:7.1f}x")


if __name__ == "__main__":
    main()
