"""Dataset construction, noise model, splits and CSV round trips."""

import numpy as np
import pytest

from odeident import data, ode
from odeident.data import (NoiseError, TrajectoryDataset, add_noise,
                           build_generator_samples, build_interp_samples,
                           derive_seed, generate_dataset, load_dataset,
                           mean_range, save_dataset)


def make_ds(states, dt=0.1, noise_level=0.0, clean=None, seed=0):
    states = np.asarray(states, dtype=float)
    times = dt * np.arange(states.shape[1])
    return TrajectoryDataset(times=times, states=states,
                             noise_level=noise_level,
                             clean_states=states if clean is None else clean,
                             problem_label="test", seed=seed)


def test_generate_zero_rhs():
    rhs = ode.RhsFunction(1, lambda t, x: np.zeros_like(x), "zero_d1")
    prob = ode.ProblemSpec(rhs, 0.0, 0.4, 0.04, 5, np.array([[-1.0, 1.0]]), 3)
    ds = generate_dataset(prob, ode.IntegratorConfig())
    assert ds.states.shape == (5, 11, 1)
    for j in range(11):
        assert np.array_equal(ds.states[:, j, :], ds.states[:, 0, :])
    assert ds.noise_level == 0.0
    assert np.array_equal(ds.states, ds.clean_states)


def test_generate_shapes_match_protocol():
    rhs = ode.catalog_lookup("exp_sine")
    prob = ode.ProblemSpec(rhs, 0.0, 0.8, 0.04, 10, np.array([[-3.0, 3.0]]), 5)
    ds = generate_dataset(prob, ode.IntegratorConfig())
    assert ds.n_times == 21
    assert np.all(ds.states[:, 0, 0] >= -3.0) and np.all(ds.states[:, 0, 0] <= 3.0)


def test_mean_range():
    states = np.array([[[0.0], [2.0]], [[1.0], [5.0]]])
    assert np.allclose(mean_range(states), [(2.0 + 4.0) / 2])


def test_add_noise_zero_level_identity():
    ds = make_ds(np.random.default_rng(0).normal(size=(3, 4, 2)))
    assert add_noise(ds, 0.0, seed=1) is ds


def test_add_noise_constant_trajectories_unchanged():
    ds = make_ds(np.ones((4, 5, 1)))
    noisy = add_noise(ds, 0.05, seed=2)
    assert np.array_equal(noisy.states, ds.states)


def test_add_noise_hand_case():
    # K=1, d=1, trajectory (0, 2): mean range M_1 = 2
    ds = make_ds(np.array([[[0.0], [2.0]]]))
    level, seed = 0.05, 123
    noisy = add_noise(ds, level, seed=seed)
    draws = np.random.default_rng(seed).normal(0.0, level, size=(1, 2, 1))
    assert noisy.states[0, 0, 0] == 0.0 + draws[0, 0, 0] * 2.0
    assert noisy.states[0, 1, 0] == 2.0 + draws[0, 1, 0] * 2.0
    assert np.array_equal(noisy.clean_states, ds.states)


def test_add_noise_rejects_bad_levels():
    ds = make_ds(np.ones((2, 3, 1)) * np.arange(3)[None, :, None])
    with pytest.raises(NoiseError):
        add_noise(ds, 0.2, seed=0)
    with pytest.raises(NoiseError):
        add_noise(ds, -0.01, seed=0)
    noisy = add_noise(ds, 0.05, seed=0)
    with pytest.raises(NoiseError):
        add_noise(noisy, 0.05, seed=0)


def test_noise_statistics():
    # 1000 * 100 = 1e5 perturbations at level 0.05
    rng = np.random.default_rng(7)
    states = rng.normal(size=(1000, 100, 1)).cumsum(axis=1)
    ds = make_ds(states)
    level = 0.05
    noisy = add_noise(ds, level, seed=99)
    m_k = mean_range(ds.states)
    rel = (noisy.states - ds.states) / m_k[None, None, :]
    assert 0.0495 <= np.std(rel) <= 0.0505
    assert -0.001 <= np.mean(rel) <= 0.001


def test_split_partition_and_determinism():
    tr, te = data._split_indices(100, 42)
    assert len(tr) == 80 and len(te) == 20
    assert np.array_equal(np.sort(np.concatenate([tr, te])), np.arange(100))
    tr2, te2 = data._split_indices(100, 42)
    assert np.array_equal(tr, tr2) and np.array_equal(te, te2)
    tr3, _ = data._split_indices(100, 43)
    assert not np.array_equal(tr, tr3)


def test_split_ratio_within_one_row():
    for n in (7, 10, 33):
        tr, te = data._split_indices(n, 0)
        assert abs(len(tr) - 0.8 * n) <= 0.5 + 1e-9
        assert len(tr) + len(te) == n


def test_derive_seed_stable():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)


def test_generator_samples_layout():
    states = np.arange(24, dtype=float).reshape(2, 6, 2)
    ds = make_ds(states)
    s = build_generator_samples(ds, 3)
    assert s.time_index == 3
    assert np.array_equal(s.inputs, states[:, 2, :])
    assert np.array_equal(s.targets, states[:, 3, :])
    with pytest.raises(IndexError):
        build_generator_samples(ds, 0)
    with pytest.raises(IndexError):
        build_generator_samples(ds, 6)


def test_generator_samples_boundary_and_constant():
    ds = make_ds(np.ones((5, 2, 1)))
    s = build_generator_samples(ds, 1)
    assert np.array_equal(s.inputs, s.targets)


def test_interp_samples_single_row():
    ds = make_ds(np.array([[[1.5], [2.0]]]))
    s = build_interp_samples(ds, np.array([[[5.0]]]), split_seed=0)
    assert s.inputs.shape == (1, 2)
    assert np.array_equal(s.inputs[0], [0.0, 1.5])
    assert s.targets[0, 0] == 5.0


def test_interp_samples_layout_and_no_final_time():
    rng = np.random.default_rng(1)
    states = rng.normal(size=(3, 5, 2))
    ds = make_ds(states)
    vel = rng.normal(size=(3, 4, 2))
    s = build_interp_samples(ds, vel, split_seed=9)
    assert s.inputs.shape == (12, 3)
    assert s.targets.shape == (12, 2)
    # trajectory-major ordering, no row carries the final time
    assert np.max(s.inputs[:, 0]) == ds.times[-2]
    row = 1 * 4 + 2   # trajectory 1, time index 2
    assert np.array_equal(s.inputs[row], [ds.times[2], *states[1, 2]])
    assert np.array_equal(s.targets[row], vel[1, 2])
    assert len(s.train_idx) + len(s.test_idx) == 12
    with pytest.raises(ValueError):
        build_interp_samples(ds, vel[:, :3, :], split_seed=9)
    with pytest.raises(ValueError):
        build_interp_samples(ds, np.full_like(vel, np.nan), split_seed=9)


def test_interp_samples_zero_velocities():
    ds = make_ds(np.random.default_rng(2).normal(size=(2, 3, 1)))
    s = build_interp_samples(ds, np.zeros((2, 2, 1)), split_seed=0)
    assert np.all(s.targets == 0.0)


def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    ds = make_ds(rng.normal(size=(4, 6, 2)) * np.pi)
    noisy = add_noise(ds, 0.07, seed=11)
    p = tmp_path / "ds.csv"
    save_dataset(noisy, p)
    loaded = load_dataset(p)
    assert np.array_equal(loaded.states, noisy.states)
    assert np.array_equal(loaded.clean_states, noisy.clean_states)
    assert np.array_equal(loaded.times, noisy.times)
    assert loaded.noise_level == noisy.noise_level
    assert loaded.problem_label == noisy.problem_label


def test_input_bounding_box():
    x = np.array([[0.0, 5.0], [2.0, -1.0], [1.0, 3.0]])
    box = data.input_bounding_box(x)
    assert np.array_equal(box, [[0.0, 2.0], [-1.0, 5.0]])
