"""Benchmark 3-D systems, trajectory simulation and dataset assembly.

Simulation uses classic fixed-step fourth-order Runge-Kutta.  Derivative
responses are central finite differences (second-order one-sided at the
two endpoints) plus optional additive Gaussian noise.  Datasets carry
three disjoint row splits: train and in-sample rows are drawn from the
strict interior time window, out-of-sample rows from the two edge
intervals at the start and end of the trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

#: Width of the leading edge interval [0, EDGE_LO] reserved for
#: out-of-sample rows, and of the trailing interval [T - EDGE_HI, T].
EDGE_LO = 0.05
EDGE_HI = 0.5


class SimulationError(RuntimeError):
    pass


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """A benchmark system: right-hand side, parameters and ground truth."""

    name: str
    rhs: Callable[[float, float, float], tuple[float, float, float]]
    params: dict
    initial_state: tuple[float, float, float]
    true_terms: tuple[tuple[str, ...], ...]
    true_intercepts: tuple[float, float, float]


def _linear3d_rhs(x, y, z):
    # a=-1, b=20, c=-20, d=-1, e=-3
    return (-x + 20.0 * x * y, -20.0 * x - x * y, -3.0 * z)


def _lorenz3d_rhs(x, y, z):
    # sigma=10, rho=28, beta=8/3
    return (10.0 * (y - x), x * (28.0 - z) - y, x * y - (8.0 / 3.0) * z)


def _hybrid3d_rhs(x, y, z):
    # a=0.2, b=0.1, c=0.4, d=5.7
    return (-y - z + 0.2 * math.sin(x), x + 0.1 * y, 0.4 + z * (x - 5.7))


SYSTEMS: dict[str, SystemSpec] = {
    "Linear3D": SystemSpec(
        name="Linear3D",
        rhs=_linear3d_rhs,
        params={"a": -1.0, "b": 20.0, "c": -20.0, "d": -1.0, "e": -3.0},
        initial_state=(2.0, 0.0, 1.0),
        true_terms=(("x0", "x0*x1"), ("x0", "x0*x1"), ("x2",)),
        true_intercepts=(0.0, 0.0, 0.0),
    ),
    "Lorenz3D": SystemSpec(
        name="Lorenz3D",
        rhs=_lorenz3d_rhs,
        params={"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
        initial_state=(-0.5, -2.0, 3.0),
        true_terms=(("x0", "x1"), ("x0", "x0*x2", "x1"), ("x0*x1", "x2")),
        true_intercepts=(0.0, 0.0, 0.0),
    ),
    "Hybrid3D": SystemSpec(
        name="Hybrid3D",
        rhs=_hybrid3d_rhs,
        params={"a": 0.2, "b": 0.1, "c": 0.4, "d": 5.7},
        initial_state=(0.5, -1.0, 2.0),
        true_terms=(("sin_rad(x0)", "x1", "x2"), ("x0", "x1"), ("x0*x2", "x2")),
        true_intercepts=(0.0, 0.0, 0.4),
    ),
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None


def simulate_system(spec: SystemSpec, dt: float, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the system with classic RK4 at fixed step dt.

    Returns (times, states) with n = horizon/dt + 1 rows.  The horizon
    must be an integer multiple of dt.  Raises SimulationError naming
    the first step at which a non-finite state appears.
    """
    if dt <= 0:
        raise GridError("dt must be positive")
    steps = int(round(horizon / dt))
    if abs(steps * dt - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise GridError(f"horizon {horizon} is not a multiple of dt {dt}")
    n = steps + 1
    times = np.arange(n) * dt
    states = np.empty((n, 3))
    x, y, z = map(float, spec.initial_state)
    states[0] = (x, y, z)
    rhs = spec.rhs
    h = dt
    for i in range(1, n):
        k1x, k1y, k1z = rhs(x, y, z)
        k2x, k2y, k2z = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y, z + 0.5 * h * k1z)
        k3x, k3y, k3z = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y, z + 0.5 * h * k2z)
        k4x, k4y, k4z = rhs(x + h * k3x, y + h * k3y, z + h * k3z)
        x += (h / 6.0) * (k1x + 2.0 * (k2x + k3x) + k4x)
        y += (h / 6.0) * (k1y + 2.0 * (k2y + k3y) + k4y)
        z += (h / 6.0) * (k1z + 2.0 * (k2z + k3z) + k4z)
        states[i, 0] = x
        states[i, 1] = y
        states[i, 2] = z
    if not np.isfinite(states).all():
        bad = int(np.argmax(~np.isfinite(states).all(axis=1)))
        raise SimulationError(f"non-finite state at step {bad}")
    return times, states


def finite_difference_derivatives(times: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Second-order finite differences of states along a uniform grid.

    Central differences on the interior, one-sided three-point stencils
    at the two endpoints.  The uniformity tolerance is relative to the
    time scale (float rounding of the grid itself must pass).
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    n = len(times)
    if n < 3:
        raise GridError("need at least 3 grid points")
    dt = (times[-1] - times[0]) / (n - 1)
    dev = np.abs(np.diff(times) - dt).max()
    if dev > 1e-12 * max(1.0, np.abs(times).max()):
        raise GridError(f"non-uniform grid: max spacing deviation {dev:g}")
    d = np.empty_like(states)
    d[1:-1] = (states[2:] - states[:-2]) / (2.0 * dt)
    # second-order one-sided stencils written as differences so constant
    # trajectories map to exactly zero
    d[0] = (4.0 * (states[1] - states[0]) - (states[2] - states[0])) / (2.0 * dt)
    d[-1] = (4.0 * (states[-1] - states[-2]) - (states[-1] - states[-3])) / (2.0 * dt)
    return d


def add_noise(derivs: np.ndarray, noise_sd: float, seed: int) -> np.ndarray:
    """Responses = derivatives + iid Gaussian noise, deterministic per seed."""
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    if noise_sd == 0:
        return np.array(derivs, dtype=float, copy=True)
    rng = np.random.default_rng(seed)
    return derivs + rng.normal(0.0, noise_sd, size=np.shape(derivs))


def noise_ladder(k: int) -> float:
    """Noise standard deviation at ladder rung k: 0.1 * 2**k."""
    return 0.1 * 2.0 ** k


@dataclass(frozen=True)
class Splits:
    train: np.ndarray
    insample: np.ndarray
    oos: np.ndarray

    def by_name(self, name: str) -> np.ndarray:
        try:
            return getattr(self, name)
        except AttributeError:
            raise KeyError(f"unknown split {name!r}") from None


def make_splits(
    times: np.ndarray,
    sizes: tuple[int, int, int],
    seed: int,
    interior_lo: float = EDGE_LO,
    interior_hi: float | None = None,
) -> Splits:
    """Sample disjoint train/insample/oos row indices.

    Train and in-sample rows come from the strict interior
    (interior_lo, interior_hi); out-of-sample rows from the inclusive
    edge union [t0, interior_lo] U [interior_hi, t_end].  Grid points on
    the boundaries belong to the edge region only.  interior_hi defaults
    to t_end - 0.5.
    """
    times = np.asarray(times, dtype=float)
    if interior_hi is None:
        interior_hi = times[-1] - EDGE_HI
    if not interior_lo < interior_hi:
        raise ValueError("interior window is empty")
    n_train, n_insample, n_oos = sizes
    dt = (times[-1] - times[0]) / (len(times) - 1)
    tol = 1e-9 * dt
    interior = np.flatnonzero((times > interior_lo + tol) & (times < interior_hi - tol))
    edges = np.flatnonzero((times <= interior_lo + tol) | (times >= interior_hi - tol))
    if n_train + n_insample > len(interior):
        raise ValueError(
            f"requested {n_train + n_insample} interior rows, region holds {len(interior)}"
        )
    if n_oos > len(edges):
        raise ValueError(f"requested {n_oos} edge rows, region holds {len(edges)}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(interior, size=n_train + n_insample, replace=False)
    oos = rng.choice(edges, size=n_oos, replace=False)
    return Splits(
        train=np.sort(picked[:n_train]),
        insample=np.sort(picked[n_train:]),
        oos=np.sort(oos),
    )


@dataclass(frozen=True)
class TrajectoryDataset:
    """One simulated trajectory with noisy derivative responses and splits."""

    system: str
    times: np.ndarray
    states: np.ndarray
    responses: np.ndarray
    noise_sd: float
    seed: int
    splits: Splits

    def split_indices(self, name: str) -> np.ndarray:
        return self.splits.by_name(name)

    def split_states(self, name: str) -> np.ndarray:
        return self.states[self.split_indices(name)]

    def split_responses(self, name: str, equation: int) -> np.ndarray:
        return self.responses[self.split_indices(name), equation]


def build_dataset(
    spec: SystemSpec,
    dt: float,
    horizon: float,
    noise_sd: float,
    noise_seed: int,
    split_sizes: tuple[int, int, int],
    split_seed: int,
    trajectory: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> TrajectoryDataset:
    """Simulate (or reuse a (times, states, derivs) triple), add noise, split."""
    if trajectory is None:
        times, states = simulate_system(spec, dt, horizon)
        derivs = finite_difference_derivatives(times, states)
    else:
        times, states, derivs = trajectory
    responses = add_noise(derivs, noise_sd, noise_seed)
    splits = make_splits(times, split_sizes, split_seed)
    return TrajectoryDataset(
        system=spec.name,
        times=times,
        states=states,
        responses=responses,
        noise_sd=noise_sd,
        seed=noise_seed,
        splits=splits,
    )


def dump_dataset(dataset: TrajectoryDataset, path) -> None:
    """Write the dataset as CSV: t,x0,x1,x2,y0,y1,y2,split."""
    labels = np.full(len(dataset.times), "unused", dtype=object)
    labels[dataset.splits.train] = "train"
    labels[dataset.splits.insample] = "insample"
    labels[dataset.splits.oos] = "oos"
    with open(path, "w") as fh:
        fh.write("# bgsindy-dataset-v1\n")
        fh.write("t,x0,x1,x2,y0,y1,y2,split\n")
        for i in range(len(dataset.times)):
            row = [dataset.times[i], *dataset.states[i], *dataset.responses[i]]
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{labels[i]}\n")
