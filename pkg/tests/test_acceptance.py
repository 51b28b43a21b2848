"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The heavy end-to-end criteria run the real experiment harness at desk
scale (n ~ 5,000 grid points, 1,000 training rows, 3 chains, 10
generations, 500 sampler iterations per generation).  Horizons and the
complexity-prior weight are chosen per system so that the Bayesian
target itself is informative on a single trajectory; docs/notes explain
the calibration.

Two sub-criteria are expected to fail for reasons recorded in the
project notes (they are asserted faithfully, not weakened):
 * criterion 2's absolute finite-difference bound (the Lorenz transient
   has |d3x/dt3| ~ 2e5, so the max central-difference error at dt=1e-4
   is ~3.4e-4, above the stated 1e-4), and
 * criterion 5's Linear3D exact-recovery clause (on the Table-equivalent
   trajectory the state collapses onto an invariant manifold by t~0.35,
   making x0*x1 and x1 posterior-indistinguishable; exact enumeration
   shows the cheaper x1 always wins).
"""

import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from bgsindy import experiment
from bgsindy.evaluate import match_terms, r_squared
from bgsindy.features import variables
from bgsindy.linmodel import (
    GaussianEvidence,
    build_design,
    fit_posterior_mode,
    log_marginal_likelihood,
)
from bgsindy.mjmcmc import MjmcmcTuning, PopulationScorer, run_mjmcmc
from bgsindy.systems import (
    build_dataset,
    finite_difference_derivatives,
    get_system,
    simulate_system,
)

import _report
from oracles import (
    exhaustive_log_posteriors,
    grid_log_evidence,
    random_tiny_problem,
    renormalize,
)

SEED_BASE = 20250810
THREADS = min(8, os.cpu_count() or 1)

# desk sampler scale pinned by the gate: 3 chains, 10 generations,
# 500 iterations per generation, population 15, 1000 training rows
DESK_SAMPLER = {
    "pop_size": 15,
    "generations": 10,
    "chains": 3,
    "mjmcmc": {"iterations": 500},
}
DESK_SIZES = [1000, 1000, 500]


def announce(num, label, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    line = f"ACCEPTANCE {num}: {status} - {label}"
    if detail:
        line += f" ({detail})"
    print(line, file=sys.__stdout__, flush=True)
    _report.record(line)


def desk_config(tmp_path, name, systems, horizon, dt, noise_ks, replicates, psi, sizes=None):
    return experiment.config_from_dict(
        {
            "systems": systems,
            "dt": dt,
            "horizon": horizon,
            "noise_ks": noise_ks,
            "replicates": replicates,
            "split_sizes": sizes or DESK_SIZES,
            "psi": psi,
            "seed_base": SEED_BASE,
            "output_dir": str(tmp_path / name),
            "threads": THREADS,
            "sampler": dict(DESK_SAMPLER),
        }
    )


def run_grid(tmp_path, name, systems, horizon, dt, noise_ks, replicates, psi, sizes=None):
    cfg = desk_config(tmp_path, name, systems, horizon, dt, noise_ks, replicates, psi, sizes)
    t0 = time.time()
    report = experiment.run_experiment(cfg)
    elapsed = time.time() - t0
    assert not report["failures"], report["failures"]
    rows = experiment.read_metrics_csv(report["metrics"])
    return cfg, report, rows, elapsed


def test_criterion_1_integrator_accuracy():
    t0 = time.time()
    times, states = simulate_system(get_system("Linear3D"), dt=1e-4, horizon=1.0)
    err = np.abs(states[:, 2] - np.exp(-3.0 * times)).max()
    elapsed = time.time() - t0
    ok = err < 1e-10 and elapsed < 5.0
    announce(1, "integrator accuracy", ok, f"max err {err:.2e}, {elapsed:.2f}s")
    assert err < 1e-10
    assert elapsed < 5.0


def test_criterion_2_finite_difference_correctness():
    errs = {}
    for dt in (1e-4, 5e-5):
        times, states = simulate_system(get_system("Lorenz3D"), dt=dt, horizon=5.0)
        d = finite_difference_derivatives(times, states)
        rhs = get_system("Lorenz3D").rhs
        analytic = np.array([rhs(*s) for s in states])
        errs[dt] = np.abs(d - analytic)[1:-1].max()
    ratio = errs[1e-4] / errs[5e-5]
    ok = errs[1e-4] < 1e-4 and 3.5 <= ratio <= 4.5
    announce(
        2,
        "finite-difference correctness",
        ok,
        f"max err {errs[1e-4]:.3e} vs bound 1e-4 "
        f"(expected unattainable, see notes); halving ratio {ratio:.2f}",
    )
    assert 3.5 <= ratio <= 4.5
    assert errs[1e-4] < 1e-4, (
        "absolute bound unattainable for correct central differences: "
        f"max interior error {errs[1e-4]:.3e} = dt^2*max|x'''|/6 with "
        "max|x'''| ~ 2e5 during the transient; see notes/decisions.md"
    )


def test_criterion_3_marginal_likelihood_oracle():
    hand = -0.5 * math.log(2 * math.pi) - 0.5 * math.log(2.0)
    v1 = log_marginal_likelihood(np.ones((2, 1)), np.array([1.0, 1.0]))
    v2 = log_marginal_likelihood(np.ones((2, 1)), np.array([0.0, 2.0]))
    hand_ok = abs(v1 - hand) < 1e-6 and abs(v2 - (hand - 1.0)) < 1e-6
    rng = np.random.default_rng(SEED_BASE)
    worst = 0.0
    for _ in range(20):
        X, y = random_tiny_problem(rng)
        gap = abs(log_marginal_likelihood(X, y) - grid_log_evidence(X, y))
        worst = max(worst, gap)
    ok = hand_ok and worst < 1e-5
    announce(3, "marginal-likelihood oracle", ok, f"worst quadrature gap {worst:.2e}")
    assert hand_ok
    assert worst < 1e-5


def test_criterion_4_sampler_vs_enumeration():
    t0 = time.time()
    rng = np.random.default_rng(1234)
    n, q = 80, 6
    states = rng.normal(size=(n, q))
    beta = np.array([1.2, 0.0, -0.8, 0.0, 0.5, 0.0])
    y = states @ beta + rng.normal(0, 1.0, n)
    evidence = GaussianEvidence(states, y, psi=2.0)
    scorer = PopulationScorer(evidence, variables(q))
    state = run_mjmcmc(
        scorer, MjmcmcTuning(iterations=20_000), seed=SEED_BASE, initial_mask=(1 << q) - 1
    )
    X_full = np.column_stack([np.ones(n), states])
    exact = renormalize(exhaustive_log_posteriors(X_full, y, [1] * q, psi=2.0))
    visited = renormalize(dict(state.visited))
    tv = 0.5 * sum(abs(exact.get(m, 0.0) - visited.get(m, 0.0)) for m in range(1 << q))
    incl_gap = 0.0
    for k in range(q):
        exact_incl = sum(p for m, p in exact.items() if m >> k & 1)
        vis_incl = sum(p for m, p in visited.items() if m >> k & 1)
        incl_gap = max(incl_gap, abs(exact_incl - vis_incl))
    elapsed = time.time() - t0
    ok = tv < 0.05 and incl_gap < 0.02 and elapsed < 60.0
    announce(
        4,
        "sampler vs enumeration",
        ok,
        f"TV {tv:.4f}, max inclusion gap {incl_gap:.4f}, {elapsed:.1f}s",
    )
    assert tv < 0.05
    assert incl_gap < 0.02
    assert elapsed < 60.0


@pytest.fixture(scope="module")
def c5_linear(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("c5lin")
    return run_grid(tmp, "linear", ["Linear3D"], horizon=1.0, dt=2e-4,
                    noise_ks=[0], replicates=10, psi=10.0)


@pytest.fixture(scope="module")
def c5_lorenz(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("c5lor")
    return run_grid(tmp, "lorenz", ["Lorenz3D"], horizon=1.0, dt=2e-4,
                    noise_ks=[0], replicates=10, psi=10.0)


def _runtime_budget():
    cores = os.cpu_count() or 1
    return 900.0 * max(1.0, 8.0 / cores)


def test_criterion_5_linear3d_exact_recovery(c5_linear):
    cfg, report, rows, elapsed = c5_linear
    perfect = 0
    for rep in range(cfg.replicates):
        cells = [r for r in rows if r["replicate"] == rep]
        assert len(cells) == 3
        if all(r["power"] == 1.0 and r["fdr"] == 0.0 for r in cells):
            perfect += 1
    ok = perfect >= 8 and elapsed < _runtime_budget()
    announce(
        5,
        "Linear3D exact recovery at low noise",
        ok,
        f"{perfect}/10 replicates with exact MPM "
        f"(expected unattainable, see notes); {elapsed:.0f}s",
    )
    assert elapsed < _runtime_budget()
    assert perfect >= 8, (
        f"only {perfect}/10 replicates recovered the exact truth: on this "
        "trajectory the invariant manifold makes x0*x1 and x1 posterior-"
        "indistinguishable (proven by exhaustive enumeration); "
        "see notes/decisions.md"
    )


def test_criterion_5_lorenz3d_power_fdr(c5_lorenz):
    cfg, report, rows, elapsed = c5_lorenz
    mean_power = float(np.mean([r["power"] for r in rows]))
    mean_fdr = float(np.mean([r["fdr"] for r in rows]))
    ok = mean_power >= 0.9 and mean_fdr <= 0.2 and elapsed < _runtime_budget()
    announce(
        5,
        "Lorenz3D mean Power/FDR at low noise",
        ok,
        f"mean power {mean_power:.3f}, mean FDR {mean_fdr:.3f}, {elapsed:.0f}s",
    )
    assert mean_power >= 0.9
    assert mean_fdr <= 0.2
    assert elapsed < _runtime_budget()


@pytest.fixture(scope="module")
def c6_runs(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("c6")
    grids = {
        "Linear3D": dict(horizon=1.0, dt=2e-4, psi=10.0, replicates=20, sizes=None),
        "Lorenz3D": dict(horizon=1.0, dt=2e-4, psi=10.0, replicates=8, sizes=None),
        # the coarse T=50 grid holds only 57 edge points for oos rows
        "Hybrid3D": dict(
            horizon=50.0, dt=1e-2, psi=40.0, replicates=10, sizes=[1000, 1000, 50]
        ),
    }
    out = {}
    for system, g in grids.items():
        _, report, rows, _ = run_grid(
            tmp, system.lower(), [system], horizon=g["horizon"], dt=g["dt"],
            noise_ks=[0, 3, 6], replicates=g["replicates"], psi=g["psi"],
            sizes=g["sizes"],
        )
        out[system] = rows
    return out


def test_criterion_6_noise_degradation_monotonicity(c6_runs):
    all_ok = True
    details = []
    for system, rows in c6_runs.items():
        by_k = {}
        for r in rows:
            by_k.setdefault(round(r["noise_sd"], 6), []).append(r)
        noise_levels = sorted(by_k)
        powers = [float(np.mean([r["power"] for r in by_k[sd]])) for sd in noise_levels]
        r2s = [float(np.mean([r["r2_insample"] for r in by_k[sd]])) for sd in noise_levels]
        mono_p = all(a >= b for a, b in zip(powers, powers[1:]))
        mono_r = all(a >= b for a, b in zip(r2s, r2s[1:]))
        all_ok &= mono_p and mono_r
        details.append(
            f"{system} power {['%.3f' % p for p in powers]} r2 {['%.3f' % r for r in r2s]}"
        )
    announce(6, "noise-degradation monotonicity", all_ok, "; ".join(details))
    for system, rows in c6_runs.items():
        by_k = {}
        for r in rows:
            by_k.setdefault(round(r["noise_sd"], 6), []).append(r)
        noise_levels = sorted(by_k)
        powers = [float(np.mean([r["power"] for r in by_k[sd]])) for sd in noise_levels]
        r2s = [float(np.mean([r["r2_insample"] for r in by_k[sd]])) for sd in noise_levels]
        assert all(a >= b for a, b in zip(powers, powers[1:])), (system, powers)
        assert all(a >= b for a, b in zip(r2s, r2s[1:])), (system, r2s)


def test_criterion_7_prediction_sanity():
    dataset = build_dataset(
        get_system("Linear3D"),
        dt=1e-4,
        horizon=2.0,
        noise_sd=0.0,
        noise_seed=experiment.derive_seed(SEED_BASE, "noise", "Linear3D", "c7", 0),
        split_sizes=(1000, 1000, 500),
        split_seed=experiment.derive_seed(SEED_BASE, "split", "Linear3D", "c7", 0),
    )
    spec = get_system("Linear3D")
    from bgsindy.features import parse

    recovered = {}
    r2s = []
    for eq, terms in enumerate(spec.true_terms):
        feats = [parse(k) for k in terms]
        X, y = build_design(feats, dataset, "train", eq)
        fit = fit_posterior_mode(X, y)
        for k, beta in zip(terms, fit.beta[1:]):
            recovered[(eq, k)] = beta
        baseline = float(y.mean())
        r2s.append(r_squared(y, X @ fit.beta, baseline))
    expected = {
        (0, "x0"): -1.0,
        (0, "x0*x1"): 20.0,
        (1, "x0"): -20.0,
        (1, "x0*x1"): -1.0,
        (2, "x2"): -3.0,
    }
    gaps = {k: abs(recovered[k] - v) for k, v in expected.items()}
    worst = max(gaps.values())
    ok = worst < 1e-3 and min(r2s) > 0.999
    announce(
        7,
        "prediction sanity on noiseless Linear3D",
        ok,
        f"worst coefficient gap {worst:.2e}, min r2_train {min(r2s):.6f}",
    )
    assert worst < 1e-3, gaps
    assert min(r2s) > 0.999


def test_criterion_8_determinism(tmp_path):
    outs = []
    for sub in ("a", "b"):
        cfg = experiment.config_from_dict(
            {
                "systems": ["Linear3D"],
                "dt": 1e-3,
                "horizon": 1.0,
                "noise_ks": [0],
                "replicates": 2,
                "split_sizes": [200, 100, 50],
                "psi": 10.0,
                "seed_base": SEED_BASE,
                "output_dir": str(tmp_path / sub),
                "threads": THREADS,
                "sampler": {
                    "pop_size": 8,
                    "generations": 4,
                    "chains": 2,
                    "mjmcmc": {"iterations": 150},
                },
            }
        )
        report = experiment.run_experiment(cfg)
        outs.append(
            (
                Path(report["metrics"]).read_bytes(),
                Path(report["terms"]).read_bytes(),
            )
        )
    ok = outs[0] == outs[1]
    announce(8, "byte-identical reruns", ok)
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]


def test_criterion_9_metric_definitions():
    checks = [
        match_terms({"x0", "x0*x1"}, {"x0", "x0*x1"}) == (1.0, 0.0),
        match_terms({"x0", "x0*x1", "x2"}, {"x0", "x0*x1"}) == (1.0, pytest.approx(1 / 3)),
        match_terms(set(), {"x2"}) == (0.0, 0.0),
        r_squared(np.array([1.0, 2.0]), np.array([1.0, 2.0]), 1.5) == 1.0,
        r_squared(np.array([1.0, 3.0]), np.array([2.0, 2.0]), 2.0) == 0.0,
        r_squared(np.array([0.0, 2.0]), np.array([2.0, 0.0]), 1.0) == pytest.approx(-3.0),
    ]
    ok = all(checks)
    announce(9, "metric definition hand-examples", ok)
    assert ok
