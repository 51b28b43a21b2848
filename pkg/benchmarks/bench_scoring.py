#!/usr/bin/env python3
"""Benchmark the compiled scoring kernel against the numpy fallback.

Two measurements:
  * raw subset_score throughput on random inclusion masks over a
    15-feature Gram matrix (the hot call of the samplers), and
  * wall time of a full MJMCMC run with each backend wired in.

Run:  python benchmarks/bench_scoring.py
"""

import time

import numpy as np

from bgsindy import _gausscore_py
from bgsindy import kernels
from bgsindy.features import variables
from bgsindy.linmodel import GaussianEvidence
from bgsindy.mjmcmc import MjmcmcTuning, PopulationScorer, run_mjmcmc

try:
    from bgsindy import _gausscore

    BACKENDS = [("cython", _gausscore), ("python", _gausscore_py)]
except ImportError:
    print("compiled kernel not built; benchmarking the fallback only")
    BACKENDS = [("python", _gausscore_py)]

N_ROWS = 1000
N_FEATURES = 15
N_CALLS = 20_000
MJMCMC_ITERATIONS = 2000


def build_problem(seed=0):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(N_ROWS, N_FEATURES))
    beta = np.zeros(N_FEATURES)
    beta[[0, 3, 7]] = [1.5, -2.0, 0.8]
    y = states @ beta + rng.normal(size=N_ROWS)
    Z = np.column_stack([np.ones(N_ROWS), states])
    gram = np.ascontiguousarray(Z.T @ Z)
    xty = np.ascontiguousarray(Z.T @ y)
    return states, y, gram, xty, float(y @ y)


def bench_subset_score(impl, gram, xty, yty):
    rng = np.random.default_rng(1)
    masks = rng.integers(0, 1 << N_FEATURES, size=N_CALLS)
    cols_list = [
        np.array([0] + [i + 1 for i in range(N_FEATURES) if m >> i & 1], dtype=np.int64)
        for m in masks
    ]
    t0 = time.perf_counter()
    for cols in cols_list:
        impl.subset_score(gram, xty, yty, N_ROWS, cols, 1e-10)
    return time.perf_counter() - t0


def bench_mjmcmc(impl, states, y):
    original = kernels.subset_score
    kernels.subset_score = impl.subset_score
    try:
        evidence = GaussianEvidence(states, y, psi=2.0)
        scorer = PopulationScorer(evidence, variables(N_FEATURES))
        t0 = time.perf_counter()
        run_mjmcmc(scorer, MjmcmcTuning(iterations=MJMCMC_ITERATIONS), seed=7,
                   initial_mask=(1 << N_FEATURES) - 1)
        return time.perf_counter() - t0
    finally:
        kernels.subset_score = original


def main():
    states, y, gram, xty, yty = build_problem()
    print(f"active backend at import: {kernels.BACKEND}")
    print(f"\nsubset_score: {N_CALLS} random masks, {N_FEATURES} features, n={N_ROWS}")
    score_times = {}
    for name, impl in BACKENDS:
        t = bench_subset_score(impl, gram, xty, yty)
        score_times[name] = t
        print(f"  {name:7s} {t:8.3f}s  ({N_CALLS / t / 1e3:8.1f}k calls/s)")
    if len(score_times) == 2:
        print(f"  speedup {score_times['python'] / score_times['cython']:.1f}x")

    print(f"\nmjmcmc run: {MJMCMC_ITERATIONS} iterations over 2^{N_FEATURES} models")
    run_times = {}
    for name, impl in BACKENDS:
        t = bench_mjmcmc(impl, states, y)
        run_times[name] = t
        print(f"  {name:7s} {t:8.3f}s")
    if len(run_times) == 2:
        print(f"  speedup {run_times['python'] / run_times['cython']:.1f}x")


if __name__ == "__main__":
    main()
