"""Comparison methods: spline-derivative velocity targets, the single-network
multistep (Euler) trainer, polynomial least squares and STLSQ sparse
regression over a custom function library."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, make_smoothing_spline

from . import nn_core
from .data import (InterpSampleSet, TrajectoryDataset, derive_seed,
                   input_bounding_box)
from .nn_core import EulerResidualLoss, MlpModel, MlpSpec, TrainingError


# ---------------------------------------------------------------------------
# Splines-derivative targets


def splines_targets(ds: TrajectoryDataset, lam: float | None = None) -> np.ndarray:
    """Velocity estimates from per-trajectory cubic smoothing splines.

    ``lam`` is the smoothing parameter; 0 interpolates the samples exactly,
    None selects it by generalized cross-validation per trajectory.  Returns
    a (K, M-1, d) tensor of spline derivatives at t_1 .. t_{M-1}.
    """
    if ds.n_times < 4:
        raise ValueError("need at least 4 time points for cubic splines")
    if lam is not None and lam < 0:
        raise ValueError("lambda must be non-negative")
    k, m, d = ds.states.shape
    out = np.empty((k, m - 1, d))
    ts = ds.times
    for i in range(k):
        for c in range(d):
            y = ds.states[i, :, c]
            if lam == 0:
                spl = CubicSpline(ts, y)
            else:
                spl = make_smoothing_spline(ts, y, lam=lam)
            out[i, :, c] = spl.derivative()(ts[:m - 1])
    return out


# ---------------------------------------------------------------------------
# Multistep (single-network Euler) baseline


@dataclass(frozen=True)
class MultistepConfig:
    hidden_widths: tuple[int, ...]
    epochs: int = 3000
    learning_rate: float = 1e-3
    lrelu_slope: float = 0.01
    seed: int = 0


@dataclass
class MultistepModel:
    net: MlpModel               # (1+d) -> d
    dt: float
    final_loss: float

    @property
    def dim(self) -> int:
        return self.net.spec.output_dim

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return nn_core.mlp_forward(self.net, np.asarray(inputs, dtype=float))


def multistep_train(ds: TrajectoryDataset, cfg: MultistepConfig) -> MultistepModel:
    """Train one time-aware network on the Euler residual pooled over all
    (trajectory, time-step) pairs."""
    if ds.n_times < 2:
        raise ValueError("need at least two time steps")
    k, m, d = ds.states.shape
    t_col = np.tile(ds.times[:m - 1, None], (k, 1)).reshape(k * (m - 1), 1)
    x = ds.states[:, :m - 1, :].reshape(k * (m - 1), d)
    y = ds.states[:, 1:, :].reshape(k * (m - 1), d)
    inputs = np.concatenate([t_col, x], axis=1)

    spec = MlpSpec(1 + d, d, cfg.hidden_widths, cfg.lrelu_slope,
                   seed=derive_seed(cfg.seed, 51))
    model = nn_core.mlp_init(spec)
    model = nn_core.rescale_input_layer(model, input_bounding_box(inputs))
    quot = (y - x) / ds.dt
    scale = float(np.sqrt(np.mean(quot ** 2)))
    if scale > 0.0:
        model = nn_core.scale_output_layer(model, scale)
    loss = EulerResidualLoss(ds.dt, state_slice=slice(1, None))
    result = nn_core.fit(model, inputs, y, loss, epochs=cfg.epochs,
                         learning_rate=cfg.learning_rate)
    return MultistepModel(net=result.model, dt=ds.dt,
                          final_loss=result.final_loss)


# ---------------------------------------------------------------------------
# Polynomial regression


def _monomial_exponents(n_vars: int, degree: int):
    """All exponent tuples with total degree <= degree, graded order."""
    exps = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), total):
            e = [0] * n_vars
            for v in combo:
                e[v] += 1
            exps.append(tuple(e))
    return exps


def _monomial_matrix(x: np.ndarray, exps) -> np.ndarray:
    cols = [np.prod(x ** np.array(e), axis=1) for e in exps]
    return np.stack(cols, axis=1)


@dataclass
class PolyModel:
    exponents: list[tuple[int, ...]]
    coeffs_scaled: np.ndarray    # (P, d), basis in rescaled coordinates
    center: np.ndarray
    half: np.ndarray
    degree: int
    rank_deficient: bool

    @property
    def dim(self) -> int:
        return self.coeffs_scaled.shape[1]

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        z = (np.asarray(inputs, dtype=float) - self.center) / self.half
        return _monomial_matrix(z, self.exponents) @ self.coeffs_scaled

    def coefficients_original(self) -> np.ndarray:
        """Coefficients on the original-coordinate monomial basis, obtained
        by expanding each rescaled monomial with the binomial theorem."""
        n_vars = len(self.center)
        index = {e: i for i, e in enumerate(self.exponents)}
        out = np.zeros_like(self.coeffs_scaled)
        from math import comb
        for p, e in enumerate(self.exponents):
            # expand prod_v ((x_v - c_v)/h_v)^{e_v}
            terms = {tuple([0] * n_vars): 1.0}
            for v, ev in enumerate(e):
                if ev == 0:
                    continue
                var_terms = {}
                for kk in range(ev + 1):
                    coef = comb(ev, kk) * ((-self.center[v]) ** (ev - kk)) \
                        / (self.half[v] ** ev)
                    key = kk
                    var_terms[key] = coef
                new_terms = {}
                for mono, cval in terms.items():
                    for kk, coef in var_terms.items():
                        key = list(mono)
                        key[v] += kk
                        key = tuple(key)
                        new_terms[key] = new_terms.get(key, 0.0) + cval * coef
                terms = new_terms
            for mono, cval in terms.items():
                out[index[mono]] += cval * self.coeffs_scaled[p]
        return out


def polyfit(samples, degree: int) -> PolyModel:
    """Least-squares fit per output component over all monomials in the
    input variables up to total degree, on affinely rescaled inputs."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    inputs = np.asarray(samples.inputs, dtype=float)
    targets = np.asarray(samples.targets, dtype=float)
    train_idx = getattr(samples, "train_idx", None)
    if train_idx is not None:
        inputs_fit, targets_fit = inputs[train_idx], targets[train_idx]
    else:
        inputs_fit, targets_fit = inputs, targets
    exps = _monomial_exponents(inputs.shape[1], degree)
    if inputs_fit.shape[0] < len(exps):
        raise ValueError(f"{inputs_fit.shape[0]} rows for {len(exps)} monomials")
    box = input_bounding_box(inputs)
    center = 0.5 * (box[:, 0] + box[:, 1])
    half = 0.5 * (box[:, 1] - box[:, 0])
    half = np.where(half > 0.0, half, 1.0)
    phi = _monomial_matrix((inputs_fit - center) / half, exps)
    coeffs, _, rank, _ = np.linalg.lstsq(phi, targets_fit, rcond=None)
    return PolyModel(exponents=exps, coeffs_scaled=coeffs, center=center,
                     half=half, degree=degree,
                     rank_deficient=bool(rank < len(exps)))


# ---------------------------------------------------------------------------
# STLSQ sparse regression


@dataclass(frozen=True)
class LibraryTerm:
    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]  # (t_col, x_cols) -> col


@dataclass
class FunctionLibrary:
    terms: list[LibraryTerm]

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise ValueError("library term names must be unique")
        if not self.terms:
            raise ValueError("library must be non-empty")

    def __len__(self):
        return len(self.terms)

    @property
    def names(self):
        return [t.name for t in self.terms]

    def design_matrix(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=float)
        t = inputs[:, 0]
        x = inputs[:, 1:]
        cols = [np.asarray(term.fn(t, x), dtype=float) for term in self.terms]
        return np.stack(cols, axis=1)


def _poly_name(e, var_names):
    parts = [f"{v}^{p}" if p > 1 else v for v, p in zip(var_names, e) if p > 0]
    return "*".join(parts) if parts else "1"


def polynomial_library(dim: int, max_degree: int,
                       include_time: bool = False) -> list[LibraryTerm]:
    """Polynomial terms up to ``max_degree`` in the state variables (and,
    optionally, time)."""
    var_names = (["t"] if include_time else []) + [f"x{c + 1}" for c in range(dim)]
    n_vars = len(var_names)
    terms = []
    for e in _monomial_exponents(n_vars, max_degree):
        def fn(t, x, e=e):
            cols = ([t] if include_time else []) + [x[:, c] for c in range(dim)]
            out = np.ones_like(t if include_time else x[:, 0])
            for col, p in zip(cols, e):
                if p:
                    out = out * col ** p
            return out
        terms.append(LibraryTerm(_poly_name(e, var_names), fn))
    return terms


_ELEMENTARY = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
}


def elementary_library(dim: int, names: Sequence[str],
                       scales: Sequence[float] = (1.0,)) -> list[LibraryTerm]:
    """Elementary functions applied to each scaled state component, one term
    per (function, scale, component): f(s * x_c)."""
    if not scales:
        raise ValueError("scales must be non-empty")
    terms = []
    for name in names:
        if name not in _ELEMENTARY:
            raise ValueError(f"unknown elementary function {name!r}")
        fn = _ELEMENTARY[name]
        for s in scales:
            s = float(s)
            arg = f"x{{c}}" if s == 1.0 else f"{s:g}*x{{c}}"
            for c in range(dim):
                terms.append(LibraryTerm(
                    f"{name}({arg.format(c=c + 1)})",
                    lambda t, x, fn=fn, c=c, s=s: fn(s * x[:, c])))
    return terms


@dataclass
class SparseModel:
    library: FunctionLibrary
    coefficients: np.ndarray   # (P, d)
    mask: np.ndarray           # (P, d) boolean active set
    threshold: float
    empty: bool

    @property
    def dim(self) -> int:
        return self.coefficients.shape[1]

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        return self.library.design_matrix(inputs) @ self.coefficients

    def equation_text(self) -> str:
        lines = []
        for c in range(self.dim):
            parts = []
            for p, name in enumerate(self.library.names):
                coef = self.coefficients[p, c]
                if self.mask[p, c]:
                    sign = "-" if coef < 0 else "+"
                    mag = f"{abs(coef):.3f}"
                    term = mag if name == "1" else f"{mag}*{name}"
                    parts.append((sign, term))
            if not parts:
                rhs = "0"
            else:
                first_sign, first_term = parts[0]
                rhs = ("-" if first_sign == "-" else "") + first_term
                for sign, term in parts[1:]:
                    rhs += f" {sign} {term}"
            lines.append(f"dx{c + 1}/dt = {rhs}")
        return "\n".join(lines)


def sindy_stlsq(samples, lib: FunctionLibrary, threshold: float,
                max_iters: int = 20) -> SparseModel:
    """Sequential thresholded least squares: alternate a least-squares solve
    on the active set with zeroing coefficients below the threshold."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    inputs = np.asarray(samples.inputs, dtype=float)
    targets = np.asarray(samples.targets, dtype=float)
    train_idx = getattr(samples, "train_idx", None)
    if train_idx is not None:
        inputs, targets = inputs[train_idx], targets[train_idx]
    phi = lib.design_matrix(inputs)
    n_terms, d = len(lib), targets.shape[1]
    coeffs = np.zeros((n_terms, d))
    mask = np.ones((n_terms, d), dtype=bool)
    for c in range(d):
        active = mask[:, c].copy()
        xi = np.zeros(n_terms)
        for _ in range(max_iters):
            if not active.any():
                break
            sol = np.linalg.lstsq(phi[:, active], targets[:, c], rcond=None)[0]
            xi = np.zeros(n_terms)
            xi[active] = sol
            new_active = np.abs(xi) >= threshold
            if (new_active == active).all():
                active = new_active
                break
            active = new_active
        xi[~active] = 0.0
        coeffs[:, c] = xi
        mask[:, c] = active
    return SparseModel(library=lib, coefficients=coeffs, mask=mask,
                       threshold=threshold, empty=not mask.any())
