"""The Lipschitz-regularized interpolation block: componentwise scalar
networks fit to the generator's velocity targets, with a sampled
input-gradient penalty bounding the learned field's rate of change."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn_core
from .data import InterpSampleSet, derive_seed, input_bounding_box
from .nn_core import (AdamState, MlpModel, MlpSpec, MseLoss, TrainingError,
                      load_model, save_model)

DEFAULT_LIP_SAMPLES = 1000


@dataclass(frozen=True)
class InterpConfig:
    hidden_widths: tuple[int, ...]
    alpha: float = 0.0
    lip_sample_count: int = DEFAULT_LIP_SAMPLES
    lip_domain: np.ndarray | None = None   # (1+d, 2); defaults to data box
    epochs: int | None = 3000
    target_train_mse: float | None = None  # plain MSE stopping target
    max_epochs: int = 60_000
    learning_rate: float = 1e-3
    lrelu_slope: float = 0.01
    resample_lip_each_epoch: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(self.hidden_widths))
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        if self.lip_sample_count < 1:
            raise ValueError("lip_sample_count must be positive")
        if (self.epochs is None) == (self.target_train_mse is None):
            raise ValueError("exactly one stopping rule must be active")
        if self.lip_domain is not None:
            box = np.asarray(self.lip_domain, dtype=float)
            object.__setattr__(self, "lip_domain", box)
            if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
                raise ValueError("lip_domain must be a nondegenerate box")


@dataclass
class InterpolationModel:
    component_nets: list[MlpModel]       # each (1+d) -> 1
    alpha: float
    train_mse: float                     # relative, percent
    test_mse: float                      # relative, percent
    train_mse_components: list[float]
    test_mse_components: list[float]
    estimated_lipschitz: list[float]
    lip_domain: np.ndarray
    epochs_run: list[int]

    @property
    def dim(self) -> int:
        return len(self.component_nets)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Stacked component outputs for an (N, 1+d) input batch."""
        inputs = np.asarray(inputs, dtype=float)
        cols = [nn_core.mlp_forward(net, inputs)[:, 0] for net in self.component_nets]
        return np.stack(cols, axis=1)


def eval_rhs(model: InterpolationModel, t: float, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"state must have shape ({model.dim},)")
    return model.predict(np.concatenate([[t], x])[None, :])[0]


def estimate_lipschitz(net: MlpModel, domain, n: int, seed: int) -> float:
    """Max absolute input-gradient entry over ``n`` uniform samples.

    Nested sampling: the first n draws of a larger sample count reproduce
    the smaller one, so growing n never decreases the estimate.
    """
    domain = np.asarray(domain, dtype=float)
    if domain.shape != (net.spec.input_dim, 2):
        raise ValueError("domain must be (input_dim, 2)")
    if np.any(domain[:, 1] <= domain[:, 0]):
        raise ValueError("degenerate domain")
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(domain[:, 0], domain[:, 1], size=(n, net.spec.input_dim))
    grads = nn_core.mlp_input_gradients(net, pts)
    return float(np.abs(grads).max())


def relative_mse_percent(pred: np.ndarray, target: np.ndarray) -> float:
    denom = float(np.mean(target ** 2))
    if denom < 1e-300:
        raise ZeroDivisionError("zero target energy")
    return 100.0 * float(np.mean((pred - target) ** 2)) / denom


def _train_component(inputs, targets_col, cfg: InterpConfig, domain, comp: int):
    d_in = inputs.shape[1]
    spec = MlpSpec(d_in, 1, cfg.hidden_widths, cfg.lrelu_slope,
                   seed=derive_seed(cfg.seed, 21, comp))
    model = nn_core.mlp_init(spec)
    model = nn_core.rescale_input_layer(model, domain)
    scale = float(np.sqrt(np.mean(targets_col ** 2)))
    if scale > 0.0:
        model = nn_core.scale_output_layer(model, scale)

    y = targets_col[:, None]
    mse_loss = MseLoss()
    state = AdamState.initial(model, cfg.learning_rate)
    lip_seq = np.random.SeedSequence([cfg.seed, 31, comp])
    fixed_pts = None
    if cfg.alpha > 0.0 and not cfg.resample_lip_each_epoch:
        rng = np.random.default_rng(lip_seq.generate_state(4))
        fixed_pts = rng.uniform(domain[:, 0], domain[:, 1],
                                size=(cfg.lip_sample_count, d_in))

    budget = cfg.epochs if cfg.epochs is not None else cfg.max_epochs
    epochs_run = 0
    for k in range(1, budget + 1):
        outputs, pre_acts, acts = nn_core._forward_cached(model, inputs)
        plain, delta = mse_loss.value_and_delta(outputs, inputs, y)
        if not np.isfinite(plain):
            raise TrainingError(f"component {comp} diverged at epoch {k}")
        epochs_run = k
        if cfg.target_train_mse is not None and plain <= cfg.target_train_mse:
            break
        gw, gb = nn_core._backprop(model, delta, pre_acts, acts)
        if cfg.alpha > 0.0:
            if fixed_pts is None:
                rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31, comp, k]))
                pts = rng.uniform(domain[:, 0], domain[:, 1],
                                  size=(cfg.lip_sample_count, d_in))
            else:
                pts = fixed_pts
            _, pw, pb = nn_core.lipschitz_penalty_gradients(model, pts)
            for h in range(model.n_layers):
                gw[h] = gw[h] + cfg.alpha * pw[h]
                gb[h] = gb[h] + cfg.alpha * pb[h]
        model, state = nn_core.adam_step(model, gw, gb, state)
    return model, epochs_run


def train_interpolation(samples: InterpSampleSet, cfg: InterpConfig) -> InterpolationModel:
    """Train one scalar network per output component on the train split."""
    if len(samples.train_idx) == 0:
        raise ValueError("empty train split")
    inputs = samples.train_inputs
    domain = cfg.lip_domain if cfg.lip_domain is not None \
        else input_bounding_box(samples.inputs)
    domain = np.asarray(domain, dtype=float)
    if domain.shape != (inputs.shape[1], 2):
        raise ValueError("lip_domain shape does not match the inputs")

    nets, lips, epochs_run = [], [], []
    tr_comp, te_comp = [], []
    for c in range(samples.dim):
        net, k = _train_component(inputs, samples.train_targets[:, c], cfg,
                                  domain, c)
        nets.append(net)
        epochs_run.append(k)
        lips.append(estimate_lipschitz(net, domain, cfg.lip_sample_count,
                                       seed=derive_seed(cfg.seed, 41, c)))
        pred_tr = nn_core.mlp_forward(net, samples.train_inputs)[:, 0]
        pred_te = nn_core.mlp_forward(net, samples.test_inputs)[:, 0]
        tr_comp.append(relative_mse_percent(pred_tr, samples.train_targets[:, c]))
        te_comp.append(relative_mse_percent(pred_te, samples.test_targets[:, c]))

    model = InterpolationModel(component_nets=nets, alpha=cfg.alpha,
                               train_mse=0.0, test_mse=0.0,
                               train_mse_components=tr_comp,
                               test_mse_components=te_comp,
                               estimated_lipschitz=lips,
                               lip_domain=domain, epochs_run=epochs_run)
    model.train_mse = relative_mse_percent(model.predict(samples.train_inputs),
                                           samples.train_targets)
    model.test_mse = relative_mse_percent(model.predict(samples.test_inputs),
                                          samples.test_targets)
    return model


@dataclass
class MatchedRun:
    """One regularization setting trained on both halves of a two-fold split."""
    alpha: float
    models: tuple[InterpolationModel, InterpolationModel]

    @property
    def train_mse(self) -> float:
        return 0.5 * sum(m.train_mse for m in self.models)

    @property
    def test_mse(self) -> float:
        return 0.5 * sum(m.test_mse for m in self.models)

    @property
    def generalization_gap(self) -> float:
        """Mean of the per-fold gaps.  Each row serves once as a training
        row and once as a test row, so any fixed difficulty difference
        between the two halves cancels and only the models' preference for
        their own training rows remains."""
        return 0.5 * sum(m.test_mse - m.train_mse for m in self.models)

    @property
    def estimated_lipschitz(self) -> float:
        return max(max(m.estimated_lipschitz) for m in self.models)


def _half_splits(samples: InterpSampleSet, seed: int):
    n = len(samples.inputs)
    perm = np.random.default_rng(seed).permutation(n)
    a, b = np.sort(perm[:n // 2]), np.sort(perm[n // 2:])
    return (replace(samples, train_idx=a, test_idx=b),
            replace(samples, train_idx=b, test_idx=a))


def train_matched(samples: InterpSampleSet, cfg: InterpConfig,
                  alphas) -> dict[float, MatchedRun]:
    """Matched-training-MSE protocol on a symmetrized two-fold split.

    The alpha=0 run on each fold trains on the full epoch budget; its final
    plain train MSE becomes the stopping target for every regularized run
    on that fold, so all settings are compared at the same training MSE.
    Gaps come from the fold-averaged ``MatchedRun.generalization_gap``: a
    single fixed split confounds the gap with whichever half happens to
    hold the harder rows, while the two-fold average cancels that offset.
    """
    grid = sorted({float(a) for a in alphas if a != 0.0})
    if not grid:
        raise ValueError("alphas must contain at least one non-zero value")
    folds = _half_splits(samples, derive_seed(cfg.seed, 51))
    refs, floors = [], []
    for fold in folds:
        ref = train_interpolation(fold, replace(cfg, alpha=0.0))
        pred = ref.predict(fold.train_inputs)
        floors.append(float(np.mean(np.sum((pred - fold.train_targets) ** 2,
                                           axis=1))))
        refs.append(ref)
    out = {0.0: MatchedRun(0.0, tuple(refs))}
    cap = max(cfg.max_epochs, 10 * (cfg.epochs or 0))
    for a in grid:
        models = []
        for fold, floor in zip(folds, floors):
            cfg_a = replace(cfg, alpha=a, epochs=None,
                            target_train_mse=floor, max_epochs=cap)
            models.append(train_interpolation(fold, cfg_a))
        out[a] = MatchedRun(a, tuple(models))
    return out


def save_interpolation(model: InterpolationModel, dirpath):
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    for c, net in enumerate(model.component_nets, start=1):
        save_model(net, dirpath / f"component_{c}.json")
    manifest = {
        "dim": model.dim,
        "alpha": model.alpha,
        "train_mse": model.train_mse,
        "test_mse": model.test_mse,
        "train_mse_components": model.train_mse_components,
        "test_mse_components": model.test_mse_components,
        "estimated_lipschitz": model.estimated_lipschitz,
        "lip_domain": [[float(v) for v in row] for row in model.lip_domain],
        "epochs_run": model.epochs_run,
    }
    with open(dirpath / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_interpolation(dirpath) -> InterpolationModel:
    dirpath = Path(dirpath)
    with open(dirpath / "manifest.json") as f:
        m = json.load(f)
    nets = [load_model(dirpath / f"component_{c}.json")
            for c in range(1, m["dim"] + 1)]
    return InterpolationModel(component_nets=nets, alpha=m["alpha"],
                              train_mse=m["train_mse"], test_mse=m["test_mse"],
                              train_mse_components=m["train_mse_components"],
                              test_mse_components=m["test_mse_components"],
                              estimated_lipschitz=m["estimated_lipschitz"],
                              lip_domain=np.array(m["lip_domain"]),
                              epochs_run=m["epochs_run"])
