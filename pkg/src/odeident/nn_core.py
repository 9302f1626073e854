"""Minimal feed-forward network engine.

Construction, forward pass, reverse-mode gradients (with respect to both
parameters and inputs) and a full-batch Adam optimizer for small LReLU
multilayer perceptrons.  Everything here is plain float64 numpy; there is
no computation graph, the backward passes are written out for the fixed
affine/LReLU composition used throughout the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MODEL_FORMAT_VERSION = 1


class SpecError(ValueError):
    """Invalid network specification."""


class ShapeError(ValueError):
    """Input/parameter shape mismatch."""


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_widths: tuple[int, ...]
    lrelu_slope: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise SpecError("input_dim and output_dim must be positive")
        # empty hidden_widths is allowed: a single affine layer
        if any(w < 1 for w in self.hidden_widths):
            raise SpecError("zero-width hidden layer")
        if not 0.0 < self.lrelu_slope < 1.0:
            raise SpecError("lrelu_slope must lie in (0, 1)")

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.output_dim)


@dataclass
class MlpModel:
    """Weights/biases for one MLP.  Treated as an immutable value after
    construction: optimizer steps return new models."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "MlpModel":
        return MlpModel(self.spec, [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])

    def check_shapes(self):
        widths = self.spec.layer_widths
        if len(self.weights) != len(widths) - 1 or len(self.biases) != len(widths) - 1:
            raise ShapeError("layer count mismatch")
        for h, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (widths[h + 1], widths[h]) or b.shape != (widths[h + 1],):
                raise ShapeError(f"layer {h} has shape {w.shape}, expected "
                                 f"({widths[h + 1]}, {widths[h]})")


def lrelu(x, slope: float):
    """Leaky ReLU, applied elementwise."""
    x = np.asarray(x, dtype=float)
    return np.where(x < 0.0, slope * x, x)


def lrelu_deriv(x, slope: float):
    """Derivative of the leaky ReLU; the kink at 0 takes the negative-side
    slope so input Jacobians are total functions."""
    x = np.asarray(x, dtype=float)
    return np.where(x <= 0.0, slope, 1.0)


def mlp_init(spec: MlpSpec) -> MlpModel:
    """He-style uniform fan-in initialization from the seeded generator.

    Weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), biases zero.  The same
    spec (including seed) always produces bit-identical parameters.
    """
    rng = np.random.default_rng(spec.seed)
    widths = spec.layer_widths
    weights, biases = [], []
    for h in range(len(widths) - 1):
        fan_in = widths[h]
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(widths[h + 1], widths[h])))
        biases.append(np.zeros(widths[h + 1]))
    return MlpModel(spec, weights, biases)


def rescale_input_layer(model: MlpModel, box: np.ndarray) -> MlpModel:
    """Fold an affine input standardization into the first layer.

    ``box`` is (input_dim, 2) with per-dimension [low, high]; the first layer
    is rewritten so the network behaves as if inputs were mapped to [-1, 1]
    before the original first layer.  Degenerate dimensions keep unit scale.
    """
    box = np.asarray(box, dtype=float)
    if box.shape != (model.spec.input_dim, 2):
        raise ShapeError("box must be (input_dim, 2)")
    center = 0.5 * (box[:, 0] + box[:, 1])
    half = 0.5 * (box[:, 1] - box[:, 0])
    half = np.where(half > 0.0, half, 1.0)
    out = model.copy()
    w0 = out.weights[0]
    out.biases[0] = out.biases[0] - w0 @ (center / half)
    out.weights[0] = w0 / half[None, :]
    return out


def scale_output_layer(model: MlpModel, factor: float) -> MlpModel:
    """Scale last-layer weights and biases by ``factor`` (scales outputs
    exactly, since the output layer is affine)."""
    out = model.copy()
    out.weights[-1] = out.weights[-1] * factor
    out.biases[-1] = out.biases[-1] * factor
    return out


def _as_batch(x, dim: int):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ShapeError(f"input length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"input shape {x.shape}, expected (*, {dim})")
    return x, False


def _forward_cached(model: MlpModel, x: np.ndarray):
    """Batched forward pass keeping pre-activations and activations.

    Returns (outputs, pre_acts, acts) where ``acts[h]`` is the input to
    layer h (acts[0] is the batch itself) and ``pre_acts[h]`` the affine
    output of layer h before activation.
    """
    slope = model.spec.lrelu_slope
    acts = [x]
    pre_acts = []
    z = x
    last = model.n_layers - 1
    for h, (w, b) in enumerate(zip(model.weights, model.biases)):
        a = z @ w.T + b
        pre_acts.append(a)
        z = a if h == last else lrelu(a, slope)
        if h != last:
            acts.append(z)
    return z, pre_acts, acts


def mlp_forward(model: MlpModel, x):
    """Evaluate the network.  Accepts a single input vector or an (N, d)
    batch; no activation is applied after the final affine layer."""
    xb, single = _as_batch(x, model.spec.input_dim)
    if not np.all(np.isfinite(xb)):
        raise ShapeError("non-finite input")
    out, _, _ = _forward_cached(model, xb)
    return out[0] if single else out


def mlp_input_jacobian(model: MlpModel, x) -> np.ndarray:
    """Exact Jacobian of the output with respect to the input, as an
    (output_dim, input_dim) matrix."""
    xb, _ = _as_batch(x, model.spec.input_dim)
    slope = model.spec.lrelu_slope
    _, pre_acts, _ = _forward_cached(model, xb)
    jac = model.weights[0].copy()
    for h in range(1, model.n_layers):
        d = lrelu_deriv(pre_acts[h - 1][0], slope)
        jac = model.weights[h] @ (d[:, None] * jac)
    return jac


def mlp_input_gradients(model: MlpModel, xs: np.ndarray) -> np.ndarray:
    """Batched input gradients for a scalar-output network: (N, input_dim)."""
    if model.spec.output_dim != 1:
        raise ShapeError("batched input gradients require output_dim = 1")
    xb, _ = _as_batch(xs, model.spec.input_dim)
    slope = model.spec.lrelu_slope
    _, pre_acts, _ = _forward_cached(model, xb)
    g = np.broadcast_to(model.weights[-1], (xb.shape[0], model.weights[-1].shape[1])).copy()
    for h in range(model.n_layers - 2, -1, -1):
        g = (g * lrelu_deriv(pre_acts[h], slope)) @ model.weights[h]
    return g


def _backprop(model: MlpModel, delta: np.ndarray, pre_acts, acts):
    """Accumulate parameter gradients given dL/d(output) = ``delta``."""
    slope = model.spec.lrelu_slope
    grads_w = [None] * model.n_layers
    grads_b = [None] * model.n_layers
    for h in range(model.n_layers - 1, -1, -1):
        grads_w[h] = delta.T @ acts[h]
        grads_b[h] = delta.sum(axis=0)
        if h > 0:
            delta = (delta @ model.weights[h]) * lrelu_deriv(pre_acts[h - 1], slope)
    return grads_w, grads_b


class MseLoss:
    """Mean over rows of the squared L2 residual ``||out - y||^2``."""

    def value_and_delta(self, outputs, inputs, targets):
        r = outputs - targets
        n = outputs.shape[0]
        return float((r * r).sum() / n), 2.0 * r / n


class EulerResidualLoss:
    """Mean over rows of ``||dt*out + x - y||^2`` (the Euler update rule)."""

    def __init__(self, dt: float, state_slice: slice = slice(None)):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        # which input columns hold the state (the multistep net also sees t)
        self.state_slice = state_slice

    def value_and_delta(self, outputs, inputs, targets):
        r = self.dt * outputs + inputs[:, self.state_slice] - targets
        n = outputs.shape[0]
        return float((r * r).sum() / n), 2.0 * self.dt * r / n


class LipschitzPenalizedMse:
    """MSE plus ``alpha`` times the sampled Lipschitz estimate.

    The penalty is the max absolute input-gradient entry over the sample
    points; its parameter gradient is taken through the single argmax
    sample (subgradient of the max), holding activation patterns fixed.
    Only scalar-output networks are supported.
    """

    def __init__(self, alpha: float, sample_points: np.ndarray):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.alpha = float(alpha)
        self.sample_points = np.asarray(sample_points, dtype=float)
        self.mse = MseLoss()

    def value_and_delta(self, outputs, inputs, targets):
        return self.mse.value_and_delta(outputs, inputs, targets)

    def penalty_value_and_gradients(self, model: MlpModel):
        return lipschitz_penalty_gradients(model, self.sample_points)


def lipschitz_penalty_gradients(model: MlpModel, samples: np.ndarray):
    """Value and parameter gradients of max_s max_m |dN/dx_m (s)|.

    Differentiates through the argmax sample with the LReLU activation
    pattern held fixed (exact almost everywhere for piecewise-linear nets).
    Bias gradients are identically zero.
    """
    grads = mlp_input_gradients(model, samples)
    flat = np.abs(grads)
    s_star, m_star = np.unravel_index(np.argmax(flat), flat.shape)
    value = float(flat[s_star, m_star])
    sign = float(np.sign(grads[s_star, m_star])) or 1.0

    slope = model.spec.lrelu_slope
    x = np.asarray(samples, dtype=float)[s_star]
    _, pre_acts, _ = _forward_cached(model, x[None, :])
    d_vecs = [lrelu_deriv(a[0], slope) for a in pre_acts[:-1]]

    # v[h]: derivative of layer-h input w.r.t. x_m; u[h]: sensitivity of the
    # output to layer-h pre-activation (activation pattern fixed).
    L = model.n_layers
    v = [None] * L
    e_m = np.zeros(model.spec.input_dim)
    e_m[m_star] = 1.0
    cur = e_m
    for h in range(L - 1):
        cur = d_vecs[h] * (model.weights[h] @ cur)
        v[h + 1] = cur
    v[0] = e_m

    u = [None] * L
    u[L - 1] = np.ones(1)
    for h in range(L - 1, 0, -1):
        u[h - 1] = d_vecs[h - 1] * (model.weights[h].T @ u[h])

    grads_w = [sign * np.outer(u[h], v[h]) for h in range(L)]
    grads_b = [np.zeros_like(b) for b in model.biases]
    return value, grads_w, grads_b


def mlp_param_gradients(model: MlpModel, batch_inputs, batch_targets, loss):
    """Gradients of the batch loss with respect to every weight and bias.

    Returns (loss_value, grads_w, grads_b).  ``loss`` is one of the
    registered loss forms (MseLoss, EulerResidualLoss, LipschitzPenalizedMse).
    """
    x, _ = _as_batch(batch_inputs, model.spec.input_dim)
    y = np.asarray(batch_targets, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise ShapeError("empty batch")
    if y.shape != (x.shape[0], model.spec.output_dim):
        raise ShapeError(f"target shape {y.shape}, expected "
                         f"({x.shape[0]}, {model.spec.output_dim})")
    outputs, pre_acts, acts = _forward_cached(model, x)
    value, delta = loss.value_and_delta(outputs, x, y)
    grads_w, grads_b = _backprop(model, delta, pre_acts, acts)
    if isinstance(loss, LipschitzPenalizedMse) and loss.alpha > 0.0:
        pval, pw, pb = loss.penalty_value_and_gradients(model)
        value += loss.alpha * pval
        for h in range(model.n_layers):
            grads_w[h] = grads_w[h] + loss.alpha * pw[h]
            grads_b[h] = grads_b[h] + loss.alpha * pb[h]
    return value, grads_w, grads_b


@dataclass
class AdamState:
    step_count: int
    first_moment_w: list[np.ndarray]
    first_moment_b: list[np.ndarray]
    second_moment_w: list[np.ndarray]
    second_moment_b: list[np.ndarray]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def initial(cls, model: MlpModel, learning_rate: float = 1e-3,
                beta1: float = 0.9, beta2: float = 0.999,
                epsilon: float = 1e-8) -> "AdamState":
        return cls(
            step_count=0,
            first_moment_w=[np.zeros_like(w) for w in model.weights],
            first_moment_b=[np.zeros_like(b) for b in model.biases],
            second_moment_w=[np.zeros_like(w) for w in model.weights],
            second_moment_b=[np.zeros_like(b) for b in model.biases],
            learning_rate=learning_rate, beta1=beta1, beta2=beta2,
            epsilon=epsilon,
        )


def adam_step(model: MlpModel, grads_w, grads_b, state: AdamState):
    """One bias-corrected Adam update.  Returns (new_model, new_state)."""
    if len(grads_w) != model.n_layers or len(grads_b) != model.n_layers:
        raise ShapeError("gradient layer count mismatch")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    lr = state.learning_rate
    new_w, new_b = [], []
    m_w, m_b, v_w, v_b = [], [], [], []
    for h in range(model.n_layers):
        if grads_w[h].shape != model.weights[h].shape:
            raise ShapeError(f"gradient shape mismatch at layer {h}")
        mw = b1 * state.first_moment_w[h] + (1 - b1) * grads_w[h]
        vw = b2 * state.second_moment_w[h] + (1 - b2) * grads_w[h] ** 2
        mb = b1 * state.first_moment_b[h] + (1 - b1) * grads_b[h]
        vb = b2 * state.second_moment_b[h] + (1 - b2) * grads_b[h] ** 2
        new_w.append(model.weights[h] - lr * (mw / c1) / (np.sqrt(vw / c2) + state.epsilon))
        new_b.append(model.biases[h] - lr * (mb / c1) / (np.sqrt(vb / c2) + state.epsilon))
        m_w.append(mw); v_w.append(vw); m_b.append(mb); v_b.append(vb)
    new_state = replace(state, step_count=t, first_moment_w=m_w,
                        first_moment_b=m_b, second_moment_w=v_w,
                        second_moment_b=v_b)
    return MlpModel(model.spec, new_w, new_b), new_state


@dataclass
class FitResult:
    model: MlpModel
    initial_loss: float
    final_loss: float
    epochs_run: int


def fit(model: MlpModel, inputs, targets, loss, *, epochs: int | None = None,
        target_mse: float | None = None, max_epochs: int = 200_000,
        learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
        epsilon: float = 1e-8) -> FitResult:
    """Full-batch Adam training loop with either a fixed epoch budget or a
    train-MSE stopping target (exactly one must be given)."""
    if (epochs is None) == (target_mse is None):
        raise ValueError("exactly one of epochs / target_mse must be set")
    state = AdamState.initial(model, learning_rate, beta1, beta2, epsilon)
    budget = epochs if epochs is not None else max_epochs
    initial = None
    value = np.inf
    k = 0
    for k in range(1, budget + 1):
        value, gw, gb = mlp_param_gradients(model, inputs, targets, loss)
        if initial is None:
            initial = value
        if not np.isfinite(value):
            raise TrainingError(f"loss diverged at epoch {k}")
        if target_mse is not None and value <= target_mse:
            break
        model, state = adam_step(model, gw, gb, state)
    final = mlp_param_gradients(model, inputs, targets, loss)[0]
    if not np.isfinite(final):
        raise TrainingError("final loss is non-finite")
    return FitResult(model, float(initial if initial is not None else final),
                     float(final), k)


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": {
            "input_dim": model.spec.input_dim,
            "output_dim": model.spec.output_dim,
            "hidden_widths": list(model.spec.hidden_widths),
            "lrelu_slope": model.spec.lrelu_slope,
            "seed": int(model.spec.seed),
        },
        "weights": [[[float(v) for v in row] for row in w] for w in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
    }


def model_from_dict(d: dict) -> MlpModel:
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')!r}")
    s = d["spec"]
    spec = MlpSpec(s["input_dim"], s["output_dim"], tuple(s["hidden_widths"]),
                   s["lrelu_slope"], s["seed"])
    model = MlpModel(spec,
                     [np.array(w, dtype=float) for w in d["weights"]],
                     [np.array(b, dtype=float) for b in d["biases"]])
    model.check_shapes()
    return model


def save_model(model: MlpModel, path):
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> MlpModel:
    with open(path) as f:
        return model_from_dict(json.load(f))
