"""Evaluation metrics: test-set MSE, generalization gap, recovery error,
solution error and the Hoeffding test-size bound.

All table-facing errors are relative MSE reported in percent.  Models are
anything with a ``predict((N, 1+d)) -> (N, d)`` method; the true field is an
``ode.RhsFunction``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ode import IntegrationError, IntegratorConfig, RhsFunction, integrate

MAX_GRID_POINTS = 1_000_000


class UndefinedRelativeError(ZeroDivisionError):
    """Relative MSE against a target with (numerically) zero energy."""


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape or pred.size == 0:
        raise ValueError("pred/target must be non-empty and identically shaped")
    return float(np.mean((pred - target) ** 2))


def relative_mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Relative MSE in percent: 100 * mse(pred, target) / mean(target^2)."""
    value = mse(pred, target)
    denom = float(np.mean(np.asarray(target, dtype=float) ** 2))
    if denom < 1e-300:
        raise UndefinedRelativeError("target energy below 1e-300")
    return 100.0 * value / denom


def generalization_gap(model, train_split, test_split) -> float:
    """Test-split relative MSE minus train-split relative MSE (percent); the
    test split stands in for the expectation under the true data density."""
    tr_x, tr_y = train_split
    te_x, te_y = test_split
    if len(tr_x) == 0 or len(te_x) == 0:
        raise ValueError("both splits must be non-empty")
    return relative_mse(model.predict(te_x), te_y) - \
        relative_mse(model.predict(tr_x), tr_y)


@dataclass(frozen=True)
class EvaluationGrid:
    """Lattice over (t, x)-space: the outer product of one axis per input
    dimension.  Axes are regular by default but may be given explicitly
    (for example the sampling times of a dataset)."""
    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        object.__setattr__(self, "axes", axes)
        if not axes:
            raise ValueError("at least one axis required")
        for a in axes:
            if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
                raise ValueError("each axis needs >= 2 strictly increasing points")
        if math.prod(len(a) for a in axes) > MAX_GRID_POINTS:
            raise ValueError(f"grid exceeds {MAX_GRID_POINTS} points")

    @classmethod
    def from_box(cls, box, counts) -> "EvaluationGrid":
        box = np.asarray(box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ValueError("bounds must be (n_dims, 2)")
        counts = tuple(int(c) for c in counts)
        if len(counts) != box.shape[0]:
            raise ValueError("one count per dimension required")
        if any(c < 2 for c in counts):
            raise ValueError("at least 2 points per dimension")
        return cls(axes=tuple(np.linspace(lo, hi, c)
                              for (lo, hi), c in zip(box, counts)))

    @classmethod
    def from_axes(cls, axes) -> "EvaluationGrid":
        return cls(axes=tuple(axes))

    @property
    def bounds(self) -> np.ndarray:
        return np.stack([[a[0], a[-1]] for a in self.axes])

    @property
    def counts(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.axes)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def trajectory_support_mask(points: np.ndarray, times: np.ndarray,
                            states: np.ndarray) -> np.ndarray:
    """Boolean mask of lattice points inside the data envelope.

    A point (t, x) is inside when every component of x lies between the
    per-time min and max over trajectories, linearly interpolated in t.
    This is the region where data was actually observed, as opposed to the
    axis-aligned corners of the global bounding box.
    """
    points = np.asarray(points, dtype=float)
    k, m, d = states.shape
    if points.shape[1] != 1 + d:
        raise ValueError("points must be (N, 1+d)")
    ts = points[:, 0]
    mask = np.ones(len(points), dtype=bool)
    for c in range(d):
        lo = np.interp(ts, times, states[:, :, c].min(axis=0))
        hi = np.interp(ts, times, states[:, :, c].max(axis=0))
        mask &= (points[:, 1 + c] >= lo) & (points[:, 1 + c] <= hi)
    return mask


def recovery_error(model, true_rhs: RhsFunction, grid: EvaluationGrid,
                   mask: np.ndarray | None = None):
    """Relative MSE (percent) between the learned and true fields over the
    lattice (optionally restricted by a boolean point mask).  Returns
    (overall, per_component)."""
    pts = grid.points()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (len(pts),):
            raise ValueError("mask must have one entry per lattice point")
        if not mask.any():
            raise ValueError("mask excludes every lattice point")
        pts = pts[mask]
    ts, xs = pts[:, 0], pts[:, 1:]
    truth = true_rhs.eval_batch(ts, xs)
    pred = model.predict(pts)
    per_comp = [relative_mse(pred[:, c], truth[:, c])
                for c in range(true_rhs.dim)]
    return relative_mse(pred, truth), per_comp


class LearnedRhs:
    """Adapter turning a predict-style model into an ode.RhsFunction."""

    def __init__(self, model, dim: int, label: str = "learned"):
        self.model = model
        self.dim = dim
        self.label = label

    def eval(self, t, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self.model.predict(np.concatenate([[float(t)], x])[None, :])[0]
        tx = np.concatenate([np.asarray(t, dtype=float)[:, None], x], axis=1)
        return self.model.predict(tx)

    def eval_batch(self, ts, xs):
        return self.eval(np.asarray(ts), np.asarray(xs))

    def __call__(self, t, x):
        return self.eval(t, x)


def solution_error(model, true_rhs: RhsFunction, ics: np.ndarray,
                   times: np.ndarray, cfg: IntegratorConfig):
    """Relative MSE (percent) between trajectories of the learned and the
    true field, integrated from shared ICs.  Returns (overall, per_comp)."""
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    learned = LearnedRhs(model, true_rhs.dim)
    sols_true, sols_model = [], []
    for i, ic in enumerate(ics):
        try:
            sols_true.append(integrate(true_rhs, ic, times, cfg))
        except Exception as exc:
            raise RuntimeError(f"solution error failed for IC {i}: {exc}") from exc
        try:
            sols_model.append(integrate(learned, ic, times, cfg))
        except IntegrationError:
            # a learned field whose trajectories blow up has an unbounded
            # solution error; report that instead of aborting the evaluation
            inf = float("inf")
            return inf, [inf] * true_rhs.dim
    truth = np.stack(sols_true)
    pred = np.stack(sols_model)
    per_comp = [relative_mse(pred[..., c], truth[..., c])
                for c in range(true_rhs.dim)]
    return relative_mse(pred, truth), per_comp


def hoeffding_bound_raw(eps: float, m: int) -> float:
    if eps <= 0 or m < 1:
        raise ValueError("eps must be positive and m >= 1")
    return 2.0 * math.exp(-2.0 * eps * eps * m)


def hoeffding_bound(eps: float, m: int) -> float:
    """2*exp(-2*eps^2*m), clamped to [0, 1] for reporting."""
    return min(1.0, max(0.0, hoeffding_bound_raw(eps, m)))


@dataclass
class EvaluationReport:
    method: str
    problem: str
    noise_level: float
    train_mse: float
    test_mse: float
    generalization_gap: float
    recovery_rel_mse: float
    solution_rel_mse: float
    estimated_lipschitz: float | None = None
    recovery_components: list[float] = field(default_factory=list)
    solution_components: list[float] = field(default_factory=list)
    train_mse_components: list[float] = field(default_factory=list)
    test_mse_components: list[float] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if abs(self.generalization_gap - (self.test_mse - self.train_mse)) > 1e-12:
            raise ValueError("gap must equal test_mse - train_mse")

    def to_dict(self) -> dict:
        d = {
            "method": self.method,
            "problem": self.problem,
            "noise_level": self.noise_level,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "generalization_gap": self.generalization_gap,
            "recovery_rel_mse": self.recovery_rel_mse,
            "solution_rel_mse": self.solution_rel_mse,
            "estimated_lipschitz": self.estimated_lipschitz,
            "recovery_components": self.recovery_components,
            "solution_components": self.solution_components,
            "train_mse_components": self.train_mse_components,
            "test_mse_components": self.test_mse_components,
        }
        if self.extra:
            d["extra"] = self.extra
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(method=d["method"], problem=d["problem"],
                   noise_level=d["noise_level"], train_mse=d["train_mse"],
                   test_mse=d["test_mse"],
                   generalization_gap=d["generalization_gap"],
                   recovery_rel_mse=d["recovery_rel_mse"],
                   solution_rel_mse=d["solution_rel_mse"],
                   estimated_lipschitz=d.get("estimated_lipschitz"),
                   recovery_components=d.get("recovery_components", []),
                   solution_components=d.get("solution_components", []),
                   train_mse_components=d.get("train_mse_components", []),
                   test_mse_components=d.get("test_mse_components", []),
                   extra=d.get("extra", {}))


def format_sig(value: float, digits: int = 3) -> str:
    """Percent value with 3 significant digits, matching the table style."""
    if value == 0.0:
        return "0.00%"
    return f"{value:.{digits}g}%"
