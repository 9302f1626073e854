"""Reference right-hand-side catalog and numerical integration.

The catalog holds the closed-form systems used to synthesize training data;
``integrate`` produces trajectories on a given time grid with either an
adaptive RK45 (scipy) or fixed-step RK4/Euler schemes.  Learned models are
re-solved with the fixed-step methods so solution-error comparisons are not
polluted by adaptive-step behaviour on non-smooth learned fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

DEFAULT_STATE_BOUND = 1e6


class UnknownLabelError(KeyError):
    pass


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class RhsFunction:
    """A vector field f(t, x).  ``eval`` accepts a scalar t and a state of
    shape (d,), or an (N,) time array with an (N, d) state batch."""

    dim: int
    eval: Callable[[float, np.ndarray], np.ndarray]
    label: str

    def __call__(self, t, x):
        return self.eval(t, x)

    def eval_batch(self, ts: np.ndarray, xs: np.ndarray) -> np.ndarray:
        out = self.eval(np.asarray(ts, dtype=float), np.asarray(xs, dtype=float))
        return np.asarray(out, dtype=float).reshape(len(ts), self.dim)


def _one_dim(fn):
    def wrapped(t, x):
        return np.stack([fn(t, x[..., 0])], axis=-1)
    return wrapped


_CATALOG: dict[str, RhsFunction] = {}


def register_rhs(rhs: RhsFunction, overwrite: bool = False):
    if rhs.label in _CATALOG and not overwrite:
        raise ValueError(f"label {rhs.label!r} already registered")
    _CATALOG[rhs.label] = rhs


def catalog_labels() -> list[str]:
    return sorted(_CATALOG)


def catalog_lookup(label: str) -> RhsFunction:
    try:
        return _CATALOG[label]
    except KeyError:
        raise UnknownLabelError(label) from None


def _pendulum(t, x):
    return np.stack([x[..., 1], -0.5 * x[..., 0]], axis=-1)


register_rhs(RhsFunction(1, _one_dim(lambda t, x: x * np.exp(t) + np.sin(x) ** 2 - x),
                         "exp_sine"))
register_rhs(RhsFunction(2, _pendulum, "pendulum"))
# right-continuous step: the value at t = 0.1 is +1, matching the forward
# difference quotient of the solution over [0.1, 0.1 + dt]
register_rhs(RhsFunction(1, _one_dim(lambda t, x: np.where(t >= 0.1, 1.0, -1.0)
                                     * np.ones_like(x)),
                         "sign_shift"))
register_rhs(RhsFunction(1, _one_dim(lambda t, x: np.cos(50.0 * t) * x), "osc50"))
register_rhs(RhsFunction(1, _one_dim(lambda t, x: np.cos(3.0 * x) + x ** 3 - x),
                         "cubic_cos"))
register_rhs(RhsFunction(1, _one_dim(lambda t, x: t * np.cos(x) + t ** 2 * x),
                         "t_poly_cos"))


@dataclass(frozen=True)
class ProblemSpec:
    rhs: RhsFunction
    t_start: float
    t_end: float
    dt: float
    n_trajectories: int
    ic_box: np.ndarray  # (d, 2)
    ic_seed: int

    def __post_init__(self):
        object.__setattr__(self, "ic_box", np.asarray(self.ic_box, dtype=float))
        if self.t_end <= self.t_start:
            raise ValueError("t_end must exceed t_start")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        steps = (self.t_end - self.t_start) / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError("(t_end - t_start)/dt must be a positive integer")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be positive")
        if self.ic_box.shape != (self.rhs.dim, 2):
            raise ValueError("ic_box must be (dim, 2)")
        if np.any(self.ic_box[:, 1] <= self.ic_box[:, 0]):
            raise ValueError("ic_box degenerate in some dimension")

    @property
    def n_times(self) -> int:
        return int(round((self.t_end - self.t_start) / self.dt)) + 1

    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_times)


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45_adaptive"
    abs_tol: float = 1e-9
    rel_tol: float = 1e-9
    max_step: float = np.inf
    state_bound: float = DEFAULT_STATE_BOUND

    def __post_init__(self):
        if self.method not in ("rk45_adaptive", "rk4_fixed", "euler_fixed"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.abs_tol < 1e-12 or self.rel_tol < 1e-12:
            raise ValueError("tolerances must be >= 1e-12")


def euler_step(rhs_value: np.ndarray, x: np.ndarray, dt: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError("dt must be positive")
    rhs_value = np.asarray(rhs_value, dtype=float)
    x = np.asarray(x, dtype=float)
    if rhs_value.shape != x.shape:
        raise ValueError("shape mismatch")
    return x + dt * rhs_value


def _rk4_step(f, t, x, dt):
    k1 = f(t, x)
    k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = f(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs: RhsFunction, x0, times, cfg: IntegratorConfig) -> np.ndarray:
    """Integrate ``rhs`` from ``x0``, returning the state at each time in
    ``times`` (strictly increasing; row 0 is x0 exactly)."""
    x0 = np.asarray(x0, dtype=float)
    times = np.asarray(times, dtype=float)
    if x0.shape != (rhs.dim,):
        raise ValueError(f"x0 must have shape ({rhs.dim},)")
    if not np.all(np.isfinite(x0)):
        raise IntegrationError("non-finite initial state", float(times[0]))
    if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")

    def f(t, x):
        return np.asarray(rhs.eval(t, x), dtype=float)

    if cfg.method == "rk45_adaptive":
        sol = solve_ivp(f, (times[0], times[-1]), x0, method="RK45",
                        t_eval=times, rtol=cfg.rel_tol, atol=cfg.abs_tol,
                        max_step=cfg.max_step)
        if not sol.success:
            t_fail = float(sol.t[-1]) if len(sol.t) else float(times[0])
            raise IntegrationError(f"adaptive integration failed: {sol.message}", t_fail)
        out = sol.y.T.copy()
        out[0] = x0
    else:
        out = np.empty((len(times), rhs.dim))
        out[0] = x0
        x = x0
        step = _rk4_step if cfg.method == "rk4_fixed" else \
            (lambda fn, t, y, h: y + h * fn(t, y))
        for j in range(len(times) - 1):
            x = step(f, times[j], x, times[j + 1] - times[j])
            out[j + 1] = x

    for j in range(len(times)):
        row = out[j]
        if not np.all(np.isfinite(row)) or np.any(np.abs(row) > cfg.state_bound):
            raise IntegrationError("state left the admissible box", float(times[j]))
    return out
