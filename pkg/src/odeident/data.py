"""Trajectory datasets, the mean-range noise model and training-sample
layouts for the two network blocks."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .ode import IntegratorConfig, IntegrationError, ProblemSpec, integrate

MAX_NOISE_LEVEL = 0.10
TRAIN_FRACTION = 0.8


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryDataset:
    times: np.ndarray            # (M,)
    states: np.ndarray           # (K, M, d)
    noise_level: float
    clean_states: np.ndarray | None
    problem_label: str
    seed: int

    def __post_init__(self):
        dts = np.diff(self.times)
        if len(dts) == 0 or np.any(dts <= 0):
            raise ValueError("times must be strictly increasing")
        if np.max(np.abs(dts - dts[0])) > 1e-9:
            raise ValueError("times must be uniformly spaced")
        if self.states.ndim != 3 or self.states.shape[1] != len(self.times):
            raise ValueError("states must be (K, M, d)")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states must be finite")

    @property
    def n_trajectories(self) -> int:
        return self.states.shape[0]

    @property
    def n_times(self) -> int:
        return self.states.shape[1]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


@dataclass(frozen=True)
class GeneratorSampleSet:
    """Training pairs for the network attached to time index j (1-based):
    inputs are the states at t_j, targets the states at t_{j+1}."""
    time_index: int
    inputs: np.ndarray     # (K, d)
    targets: np.ndarray    # (K, d)
    dt: float
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train_inputs(self):
        return self.inputs[self.train_idx]

    @property
    def train_targets(self):
        return self.targets[self.train_idx]

    @property
    def test_inputs(self):
        return self.inputs[self.test_idx]

    @property
    def test_targets(self):
        return self.targets[self.test_idx]


@dataclass(frozen=True)
class InterpSampleSet:
    """Rows (t_j, x_i(t_j)) -> velocity estimate, j <= M-1, with an 80/20
    train/test split by seeded permutation over all rows."""
    inputs: np.ndarray     # (N, 1+d)
    targets: np.ndarray    # (N, d)
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def train_inputs(self):
        return self.inputs[self.train_idx]

    @property
    def train_targets(self):
        return self.targets[self.train_idx]

    @property
    def test_inputs(self):
        return self.inputs[self.test_idx]

    @property
    def test_targets(self):
        return self.targets[self.test_idx]

    @property
    def dim(self) -> int:
        return self.targets.shape[1]


def _split_indices(n: int, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(TRAIN_FRACTION * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def derive_seed(*parts: int) -> int:
    """Stable per-component seed derivation from a tuple of integers."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def generate_dataset(problem: ProblemSpec, cfg: IntegratorConfig) -> TrajectoryDataset:
    """Integrate K trajectories from ICs sampled uniformly in the IC box."""
    times = problem.times()
    rng = np.random.default_rng(problem.ic_seed)
    ics = rng.uniform(problem.ic_box[:, 0], problem.ic_box[:, 1],
                      size=(problem.n_trajectories, problem.rhs.dim))
    states = np.empty((problem.n_trajectories, len(times), problem.rhs.dim))
    for i in range(problem.n_trajectories):
        try:
            states[i] = integrate(problem.rhs, ics[i], times, cfg)
        except IntegrationError as exc:
            raise IntegrationError(
                f"trajectory {i} failed at t={exc.t}: {exc}", exc.t) from exc
    return TrajectoryDataset(times=times, states=states, noise_level=0.0,
                             clean_states=states, problem_label=problem.rhs.label,
                             seed=problem.ic_seed)


def mean_range(states: np.ndarray) -> np.ndarray:
    """Per-component mean over trajectories of |max_t - min_t|."""
    return np.abs(states.max(axis=1) - states.min(axis=1)).mean(axis=0)


def add_noise(ds: TrajectoryDataset, level: float, seed: int) -> TrajectoryDataset:
    """Perturb every sample by n * M_k with n ~ N(0, level^2); ``level`` is
    the standard deviation of the relative perturbation."""
    if not 0.0 <= level <= MAX_NOISE_LEVEL:
        raise NoiseError(f"noise level {level} outside [0, {MAX_NOISE_LEVEL}]")
    if ds.noise_level != 0.0:
        raise NoiseError("dataset already carries noise")
    if level == 0.0:
        return ds
    m_k = mean_range(ds.states)
    draws = np.random.default_rng(seed).normal(0.0, level, size=ds.states.shape)
    noisy = ds.states + draws * m_k[None, None, :]
    return replace(ds, states=noisy, noise_level=level,
                   clean_states=ds.clean_states, seed=seed)


def build_generator_samples(ds: TrajectoryDataset, j: int,
                            split_seed: int | None = None) -> GeneratorSampleSet:
    """Sample set for the j-th generator network (1-based, 1 <= j <= M-1)."""
    if not 1 <= j <= ds.n_times - 1:
        raise IndexError(f"time index {j} outside [1, {ds.n_times - 1}]")
    if split_seed is None:
        split_seed = derive_seed(ds.seed, 101, j)
    train_idx, test_idx = _split_indices(ds.n_trajectories, split_seed)
    return GeneratorSampleSet(time_index=j,
                              inputs=ds.states[:, j - 1, :],
                              targets=ds.states[:, j, :],
                              dt=ds.dt, train_idx=train_idx, test_idx=test_idx)


def build_interp_samples(ds: TrajectoryDataset, velocities: np.ndarray,
                         split_seed: int) -> InterpSampleSet:
    """Assemble ((t_j, x_i(t_j)), velocity) rows for all i and j <= M-1."""
    k, m, d = ds.states.shape
    velocities = np.asarray(velocities, dtype=float)
    if velocities.shape != (k, m - 1, d):
        raise ValueError(f"velocities must be ({k}, {m - 1}, {d})")
    if not np.all(np.isfinite(velocities)):
        raise ValueError("velocities must be finite")
    inputs = np.concatenate([np.tile(ds.times[:m - 1, None], (k, 1)).reshape(k * (m - 1), 1),
                             ds.states[:, :m - 1, :].reshape(k * (m - 1), d)], axis=1)
    targets = velocities.reshape(k * (m - 1), d)
    train_idx, test_idx = _split_indices(k * (m - 1), split_seed)
    return InterpSampleSet(inputs=inputs, targets=targets,
                           train_idx=train_idx, test_idx=test_idx)


def input_bounding_box(inputs: np.ndarray) -> np.ndarray:
    """Axis-aligned [low, high] box of a sample matrix, one row per column."""
    return np.stack([inputs.min(axis=0), inputs.max(axis=0)], axis=1)


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(ds: TrajectoryDataset, csv_path, sidecar: dict | None = None):
    """Write the CSV layout ``traj_id,t,x1..xd[,clean_x1..clean_xd]`` plus a
    JSON sidecar; floats are written with full round-trip precision."""
    csv_path = Path(csv_path)
    k, m, d = ds.states.shape
    has_clean = ds.clean_states is not None
    cols = ["traj_id", "t"] + [f"x{c + 1}" for c in range(d)]
    if has_clean:
        cols += [f"clean_x{c + 1}" for c in range(d)]
    with open(csv_path, "w") as f:
        f.write(",".join(cols) + "\n")
        for i in range(k):
            for j in range(m):
                row = [str(i), _fmt(ds.times[j])]
                row += [_fmt(v) for v in ds.states[i, j]]
                if has_clean:
                    row += [_fmt(v) for v in ds.clean_states[i, j]]
                f.write(",".join(row) + "\n")
    meta = {
        "problem_label": ds.problem_label,
        "noise_level": ds.noise_level,
        "seed": int(ds.seed),
        "n_trajectories": k,
        "n_times": m,
        "dim": d,
        "has_clean": has_clean,
    }
    if sidecar:
        meta.update(sidecar)
    with open(csv_path.with_suffix(".json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)


def load_dataset(csv_path) -> TrajectoryDataset:
    csv_path = Path(csv_path)
    with open(csv_path.with_suffix(".json")) as f:
        meta = json.load(f)
    k, m, d = meta["n_trajectories"], meta["n_times"], meta["dim"]
    raw = np.loadtxt(csv_path, delimiter=",", skiprows=1)
    raw = raw.reshape(k, m, -1)
    times = raw[0, :, 1].copy()
    states = raw[:, :, 2:2 + d].copy()
    clean = raw[:, :, 2 + d:2 + 2 * d].copy() if meta["has_clean"] else None
    return TrajectoryDataset(times=times, states=states,
                             noise_level=meta["noise_level"],
                             clean_states=clean,
                             problem_label=meta["problem_label"],
                             seed=meta["seed"])
