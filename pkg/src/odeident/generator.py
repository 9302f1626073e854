"""The target data generator: one network per interior time step, trained so
that an Euler step with it maps the state at t_j onto the state at t_{j+1}.
The trained ensemble emits velocity estimates that act as the prior for f."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn_core
from .data import (TrajectoryDataset, build_generator_samples, derive_seed,
                   input_bounding_box, mean_range)
from .nn_core import (EulerResidualLoss, MlpModel, MlpSpec, TrainingError,
                      load_model, save_model)


@dataclass(frozen=True)
class GeneratorConfig:
    hidden_widths: tuple[int, ...]
    epochs: int = 2000
    learning_rate: float = 1e-3
    lrelu_slope: float = 0.01
    loss_floor: float = 0.0      # residual MSE stopping level; 0 disables
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.loss_floor < 0.0:
            raise ValueError("loss_floor must be non-negative")


@dataclass
class GeneratorEnsemble:
    networks: list[MlpModel]     # ordered, index j-1 holds the net for t_j
    dt: float
    times: np.ndarray            # the M dataset times the ensemble was built on
    training_losses: list[float]

    @property
    def n_networks(self) -> int:
        return len(self.networks)


def residual_noise_floor(ds: TrajectoryDataset) -> float:
    """Noise energy in the one-step Euler residual.

    Both endpoints of a step carry independent N(0, (level*M_k)^2)
    perturbations, so no network can push the mean squared residual below
    2 * sum_k sigma_k^2 without fitting the noise itself.  Stopping at
    this level (the discrepancy principle) keeps the per-step networks
    from memorizing the perturbations.
    """
    if ds.noise_level == 0.0:
        return 0.0
    base = ds.clean_states if ds.clean_states is not None else ds.states
    sigma = ds.noise_level * mean_range(base)
    return float(2.0 * np.sum(sigma ** 2))


class GeneratorTrainingError(TrainingError):
    def __init__(self, j: int, cause: Exception):
        super().__init__(f"generator network {j} failed: {cause}")
        self.time_index = j


def _train_one(ds: TrajectoryDataset, cfg: GeneratorConfig, j: int):
    samples = build_generator_samples(ds, j)
    d = ds.dim
    spec = MlpSpec(d, d, cfg.hidden_widths, cfg.lrelu_slope,
                   seed=derive_seed(cfg.seed, 11, j))
    model = nn_core.mlp_init(spec)
    model = nn_core.rescale_input_layer(model, input_bounding_box(samples.inputs))
    # start the output layer at the scale of the implied difference quotients
    quot = (samples.train_targets - samples.train_inputs) / samples.dt
    scale = float(np.sqrt(np.mean(quot ** 2)))
    if scale > 0.0:
        model = nn_core.scale_output_layer(model, scale)
    loss = EulerResidualLoss(samples.dt)
    try:
        if cfg.loss_floor > 0.0:
            result = nn_core.fit(model, samples.train_inputs,
                                 samples.train_targets, loss,
                                 target_mse=cfg.loss_floor,
                                 max_epochs=cfg.epochs,
                                 learning_rate=cfg.learning_rate)
        else:
            result = nn_core.fit(model, samples.train_inputs,
                                 samples.train_targets, loss,
                                 epochs=cfg.epochs,
                                 learning_rate=cfg.learning_rate)
    except TrainingError as exc:
        raise GeneratorTrainingError(j, exc) from exc
    return result.model, result.final_loss


def train_generator(ds: TrajectoryDataset, cfg: GeneratorConfig) -> GeneratorEnsemble:
    """Train the M-1 time-indexed networks.  Each network gets its own
    derived seed, so the training order is irrelevant to the result."""
    if ds.n_times < 2:
        raise ValueError("dataset must have at least two time steps")
    networks, losses = [], []
    for j in range(1, ds.n_times):
        model, final_loss = _train_one(ds, cfg, j)
        networks.append(model)
        losses.append(final_loss)
    return GeneratorEnsemble(networks=networks, dt=ds.dt,
                             times=ds.times.copy(), training_losses=losses)


def predict_velocities(ens: GeneratorEnsemble, ds: TrajectoryDataset) -> np.ndarray:
    """Velocity estimates N_j(x_i(t_j)) as a (K, M-1, d) tensor."""
    if ds.n_times - 1 != ens.n_networks or abs(ds.dt - ens.dt) > 1e-12 \
            or np.max(np.abs(ds.times - ens.times)) > 1e-12:
        raise ValueError("dataset grid does not match the ensemble")
    k, m, d = ds.states.shape
    out = np.empty((k, m - 1, d))
    for j in range(m - 1):
        out[:, j, :] = nn_core.mlp_forward(ens.networks[j], ds.states[:, j, :])
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite velocity prediction")
    return out


def save_ensemble(ens: GeneratorEnsemble, dirpath):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for j, model in enumerate(ens.networks, start=1):
        save_model(model, dirpath / f"net_{j:04d}.json")
    manifest = {
        "n_networks": ens.n_networks,
        "dt": ens.dt,
        "times": [float(t) for t in ens.times],
        "training_losses": [float(v) for v in ens.training_losses],
    }
    with open(dirpath / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_ensemble(dirpath) -> GeneratorEnsemble:
    dirpath = Path(dirpath)
    with open(dirpath / "manifest.json") as f:
        manifest = json.load(f)
    networks = [load_model(dirpath / f"net_{j:04d}.json")
                for j in range(1, manifest["n_networks"] + 1)]
    return GeneratorEnsemble(networks=networks, dt=manifest["dt"],
                             times=np.array(manifest["times"]),
                             training_losses=manifest["training_losses"])
