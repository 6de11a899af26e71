"""Fixed-step method-of-steps integrator for the delayed model.

Both delays must be integer multiples of the step, so delayed values at
grid nodes are read straight from the stored path.  RK4 half-step stages
fall between nodes; there the path is reconstructed by cubic Hermite
interpolation from the stored node values and derivatives.  For ``t <= t0``
the path equals the constant history and controls equal their pre-window
value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ModelParams, rhs_controlled, rhs_uncontrolled

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "Grid",
    "Trajectory",
    "ControlSchedule",
    "simulate",
    "order_check",
    "hermite_mid",
]

log = logging.getLogger(__name__)

POSITIVITY_TOL = 1e-9
_OVERFLOW = 1e100


class ConfigurationError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """Integration produced a non-finite or overflowing value."""

    def __init__(self, t: float, message: str = "non-finite state"):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


def _delay_steps(delay: float, h: float, name: str) -> int:
    m = int(round(delay / h))
    if abs(m * h - delay) > 1e-9:
        raise ConfigurationError(
            f"{name}={delay!r} is not an integer multiple of h={h!r}")
    return m


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``t_i = t0 + i h`` aligned with both delays."""

    t0: float
    tf: float
    h: float
    n: int
    m1: int
    m2: int

    @classmethod
    def build(cls, tf: float, h: float, tau: float = 0.0, tau1: float = 0.0,
              t0: float = 0.0) -> "Grid":
        if not (h > 0 and math.isfinite(h)):
            raise ConfigurationError(f"step h must be positive, got {h!r}")
        if tf < t0:
            raise ConfigurationError(f"tf={tf!r} precedes t0={t0!r}")
        n = int(round((tf - t0) / h))
        if abs(t0 + n * h - tf) > 1e-12 * max(1.0, abs(tf)) + 1e-9 * h:
            raise ConfigurationError(f"horizon {tf - t0!r} is not a multiple of h={h!r}")
        return cls(t0=float(t0), tf=float(tf), h=float(h), n=n,
                   m1=_delay_steps(tau, h, "tau"), m2=_delay_steps(tau1, h, "tau1"))

    @classmethod
    def for_params(cls, p: ModelParams, tf: float, h: float, t0: float = 0.0) -> "Grid":
        return cls.build(tf, h, p.tau, p.tau1, t0)

    @property
    def m(self) -> int:
        return max(self.m1, self.m2)

    @property
    def tau(self) -> float:
        return self.m1 * self.h

    @property
    def tau1(self) -> float:
        return self.m2 * self.h

    def times(self, lo: int, hi: int) -> np.ndarray:
        """Node times for indices ``lo..hi`` inclusive."""
        return self.t0 + np.arange(lo, hi + 1) * self.h

    def check_params(self, p: ModelParams) -> None:
        if abs(self.tau - p.tau) > 1e-9 or abs(self.tau1 - p.tau1) > 1e-9:
            raise ConfigurationError(
                f"grid delays ({self.tau}, {self.tau1}) do not match parameters "
                f"({p.tau}, {p.tau1})")


@dataclass
class ControlSchedule:
    """Node values of ``(mu11, mu12, mu21, mu22)`` on ``t_0..t_n``."""

    grid: Grid
    controls: np.ndarray
    pre: np.ndarray = field(default_factory=lambda: np.zeros(4))
    bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        self.pre = np.asarray(self.pre, dtype=float)
        if self.controls.shape != (self.grid.n + 1, 4):
            raise ConfigurationError(
                f"controls must have shape {(self.grid.n + 1, 4)}, got {self.controls.shape}")
        if self.bounds is not None:
            self.bounds = np.broadcast_to(np.asarray(self.bounds, dtype=float), (4,)).copy()
            if np.any(self.controls < 0) or np.any(self.controls > self.bounds):
                raise ConfigurationError("control values outside [0, max]")

    @classmethod
    def zeros(cls, grid: Grid, bounds=None) -> "ControlSchedule":
        return cls(grid, np.zeros((grid.n + 1, 4)), bounds=bounds)

    @classmethod
    def constant(cls, grid: Grid, value: Sequence[float], bounds=None) -> "ControlSchedule":
        return cls(grid, np.tile(np.asarray(value, dtype=float), (grid.n + 1, 1)), bounds=bounds)

    def node(self, k: int) -> np.ndarray:
        return self.pre if k < 0 else self.controls[k]

    def stage(self, k: int, c: float, interp: str) -> np.ndarray:
        """Control on step ``k`` at ``t_k + c h`` for ``c`` in {0, 1/2, 1}.

        ``"hold"`` is a zero-order hold: the node value persists over the step.
        """
        if c == 0.0:
            return self.node(k)
        if interp == "hold":
            return self.node(k)
        if c == 1.0:
            return self.node(k + 1)
        return 0.5 * (self.node(k) + self.node(k + 1))


@dataclass
class Trajectory:
    """Node states on ``t_{-m}..t_n``; row ``i`` holds node ``i - m``."""

    grid: Grid
    states: np.ndarray
    history: np.ndarray
    derivs: np.ndarray
    clamp_events: int = 0

    @property
    def offset(self) -> int:
        return self.grid.m

    @property
    def times(self) -> np.ndarray:
        return self.grid.times(-self.grid.m, self.grid.n)

    def node(self, k: int) -> np.ndarray:
        return self.states[k + self.grid.m]

    @property
    def window(self) -> np.ndarray:
        """States on ``t_0..t_n``."""
        return self.states[self.grid.m:]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def hermite_mid(y0, y1, d0, d1, h):
    """Cubic Hermite interpolant at the midpoint of a step of length ``h``."""
    return 0.5 * (y0 + y1) + 0.125 * h * (d0 - d1)


class _Path:
    """Stored node values plus derivatives, queried at stage offsets."""

    def __init__(self, history: np.ndarray, n: int, h: float, dim: int = 3):
        self.history = history
        self.h = h
        self.values = np.empty((n + 1, dim))
        self.derivs = np.zeros((n + 1, dim))


def simulate(p: ModelParams, history, grid: Grid,
             u: Optional[ControlSchedule] = None, scheme: str = "rk4",
             positivity: str = "auto", control_interp: str = "linear") -> Trajectory:
    """Integrate from a constant history over ``grid``.

    ``positivity`` is ``"strict"`` (clamp components within 1e-9 below zero
    and fail below that), ``"clamp"`` (project every step onto S, I, V >= 0
    and count the events) or ``"off"``.  ``"auto"`` is strict without
    controls and clamp with them: the lagged drug-clearance terms act on
    the state at ``t - tau1`` and can remove more than is currently present.
    """
    if scheme not in ("rk4", "euler"):
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    grid.check_params(p)
    hist = np.asarray(history, dtype=float)
    if hist.shape != (3,) or np.any(hist < 0) or not np.all(np.isfinite(hist)):
        raise ConfigurationError(f"history must be a nonnegative (S, I, V), got {history!r}")
    if u is not None and u.grid != grid:
        raise ConfigurationError("control schedule grid does not match simulation grid")
    if positivity == "auto":
        positivity = "strict" if u is None else "clamp"
    if positivity not in ("strict", "clamp", "off"):
        raise ConfigurationError(f"unknown positivity mode {positivity!r}")

    n, m1, m2, h = grid.n, grid.m1, grid.m2, grid.h
    path = _Path(hist, n, h)
    path.values[0] = hist
    clamps = 0

    def delayed(k: int, c: float, m: int, stage_state):
        # state at t_k + c h - m h
        if m == 0:
            return stage_state
        j = k - m
        if c == 1.0:
            j, c = j + 1, 0.0
        if j < 0:
            return hist
        if c == 0.0:
            return path.values[j]
        return hermite_mid(path.values[j], path.values[j + 1],
                           path.derivs[j], path.derivs[j + 1], h)

    if u is None:
        def f(k, c, y):
            return rhs_uncontrolled(y, delayed(k, c, m1, y), p)
    else:
        def f(k, c, y):
            u_now = u.stage(k, c, control_interp)
            u_lag = u_now if m2 == 0 else u.stage(k - m2, c, control_interp)
            return rhs_controlled(y, delayed(k, c, m1, y), delayed(k, c, m2, y),
                                  u_now, u_lag, p)

    # overflow is caught below and reported as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            y = path.values[k]
            k1 = f(k, 0.0, y)
            path.derivs[k] = k1
            if scheme == "euler":
                y_next = y + h * k1
            else:
                k2 = f(k, 0.5, y + 0.5 * h * k1)
                k3 = f(k, 0.5, y + 0.5 * h * k2)
                k4 = f(k, 1.0, y + h * k3)
                y_next = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y_next)) or np.any(np.abs(y_next) > _OVERFLOW):
                raise DivergenceError(grid.t0 + (k + 1) * h)
            if positivity == "strict" and np.any(y_next < 0):
                if np.any(y_next < -POSITIVITY_TOL):
                    raise DivergenceError(grid.t0 + (k + 1) * h,
                                          f"negative state {y_next.tolist()}")
                log.debug("clamping %s at t=%g", y_next, grid.t0 + (k + 1) * h)
                y_next = np.maximum(y_next, 0.0)
                clamps += 1
            elif positivity == "clamp" and np.any(y_next < 0):
                y_next = np.maximum(y_next, 0.0)
                clamps += 1
            path.values[k + 1] = y_next
    path.derivs[n] = f(n, 0.0, path.values[n])

    m = grid.m
    states = np.empty((n + m + 1, 3))
    states[:m] = hist
    states[m:] = path.values
    return Trajectory(grid=grid, states=states, history=hist, derivs=path.derivs,
                      clamp_events=clamps)


def order_check(p: ModelParams, history, tf: float = 10.0, h: float = 0.02,
                scheme: str = "rk4") -> float:
    """Observed convergence order from runs at ``h`` and ``h/2``.

    Errors are measured at ``tf`` against a reference run at ``h/8``.
    Intended for the delay-free reduction (``tau = tau1 = 0``).
    """
    finals = []
    for step in (h, h / 2, h / 8):
        grid = Grid.for_params(p, tf, step)
        finals.append(simulate(p, history, grid, scheme=scheme).final)
    e1 = np.max(np.abs(finals[0] - finals[2]))
    e2 = np.max(np.abs(finals[1] - finals[2]))
    if e1 == 0.0 and e2 == 0.0:
        return math.inf
    return math.log2(e1 / e2)
