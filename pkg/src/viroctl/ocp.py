"""Quadratic-cost drug scheduling by forward-backward sweep.

Minimises

    J(u) = int_0^T I + V + A1 (mu11^2 + mu21^2) + A2 (mu12^2 + mu22^2) dt

subject to the controlled delay model.  The adjoint system contains
time-advanced terms ``lambda(t + tau)`` and ``lambda(t + tau1)``; they are
read from nodes already computed during the backward pass, and the adjoint
is zero beyond ``T``, which implements the indicator cut-offs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .dde import (ConfigurationError, ControlSchedule, DivergenceError, Grid,
                  Trajectory, hermite_mid, simulate)
from .model import ModelParams

__all__ = [
    "OcpConfig",
    "AdjointTrajectory",
    "OcpSolution",
    "evaluate_cost",
    "adjoint_backward",
    "characterize_controls",
    "control_gradient",
    "fbsm_solve",
]

log = logging.getLogger(__name__)

COST_SLACK = 1e-9


@dataclass(frozen=True)
class OcpConfig:
    params: ModelParams
    A1: float = 500.0
    A2: float = 200.0
    bounds: tuple = (1.0, 1.0, 1.0, 1.0)
    T: float = 40.0
    h: float = 0.01
    relaxation: float = 0.5
    tol: float = 1e-3
    max_iters: int = 200

    def __post_init__(self):
        b = np.broadcast_to(np.asarray(self.bounds, dtype=float), (4,))
        object.__setattr__(self, "bounds", tuple(float(v) for v in b))
        if not (self.A1 > 0 and self.A2 > 0):
            raise ConfigurationError("A1 and A2 must be positive")
        if any(v < 0 or not np.isfinite(v) for v in self.bounds):
            raise ConfigurationError("bounds must be finite and >= 0")
        if not (0 < self.relaxation <= 1):
            raise ConfigurationError("relaxation must lie in (0, 1]")
        if not (self.tol > 0):
            raise ConfigurationError("tol must be positive")
        if int(self.max_iters) < 1:
            raise ConfigurationError("max_iters must be >= 1")

    @property
    def grid(self) -> Grid:
        return Grid.for_params(self.params, self.T, self.h)


@dataclass
class AdjointTrajectory:
    """Costates on nodes ``t_0..t_{n+m}``; rows past ``n`` are zero."""

    grid: Grid
    lambdas: np.ndarray
    derivs: Optional[np.ndarray] = None

    @property
    def window(self) -> np.ndarray:
        return self.lambdas[: self.grid.n + 1]

    def at(self, k: int) -> np.ndarray:
        if k < 0:
            raise IndexError(k)
        if k >= len(self.lambdas):
            return np.zeros(3)
        return self.lambdas[k]


@dataclass
class OcpSolution:
    controls: ControlSchedule
    state: Trajectory
    adjoint: AdjointTrajectory
    cost: float
    iterations: int
    converged: bool
    cost_history: List[float]
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "cost": self.cost,
            "iterations": self.iterations,
            "converged": self.converged,
            "cost_history": list(self.cost_history),
            "I_T": float(self.state.final[1]),
            "V_T": float(self.state.final[2]),
            "diagnostics": dict(self.diagnostics),
        }

    def table(self) -> np.ndarray:
        """Rows ``t,S,I,V,mu11,mu12,mu21,mu22,l1,l2,l3`` on ``t_0..t_n``."""
        g = self.state.grid
        return np.column_stack([g.times(0, g.n), self.state.window,
                                self.controls.controls, self.adjoint.window])


CSV_COLUMNS = ("t", "S", "I", "V", "mu11", "mu12", "mu21", "mu22", "l1", "l2", "l3")


def _check_grids(traj: Trajectory, u: ControlSchedule) -> None:
    if traj.grid != u.grid:
        raise ConfigurationError("trajectory and control grids differ")


def evaluate_cost(traj: Trajectory, u: ControlSchedule, A1: float, A2: float) -> float:
    """Composite trapezoidal rule on the simulation grid."""
    _check_grids(traj, u)
    w = traj.window
    c = u.controls
    integrand = (w[:, 1] + w[:, 2]
                 + A1 * (c[:, 0] ** 2 + c[:, 2] ** 2)
                 + A2 * (c[:, 1] ** 2 + c[:, 3] ** 2))
    return float(np.trapezoid(integrand, dx=traj.grid.h))


def adjoint_backward(p: ModelParams, traj: Trajectory, u: ControlSchedule,
                     grid: Optional[Grid] = None) -> AdjointTrajectory:
    """RK4 backward from ``lambda(T) = 0``.

    Midpoint values of the forward path and of the already computed
    advanced costates come from cubic Hermite interpolation; controls are
    averaged between nodes, matching the forward pass.
    """
    grid = grid or traj.grid
    if grid != traj.grid:
        raise ConfigurationError("grid does not match trajectory")
    _check_grids(traj, u)
    n, m1, m2, h = grid.n, grid.m1, grid.m2, grid.h
    m = grid.m
    lam = np.zeros((n + m + 1, 3))
    dlam = np.zeros((n + m + 1, 3))
    X = traj.window
    dX = traj.derivs
    U = u.controls
    eps1, a = p.epsilon1, p.alpha
    cI = p.x + p.mu
    cV = p.y + p.mu1

    def state(k, c):
        if c == 0.0:
            return X[k]
        return hermite_mid(X[k - 1], X[k], dX[k - 1], dX[k], h)

    def ctrl(k, c):
        return U[k] if c == 0.0 else 0.5 * (U[k - 1] + U[k])

    def advanced(k, c, shift, stage_lam):
        # costate at t_k + c h + shift h, c in {0, -1/2, -1}
        if shift == 0:
            return stage_lam
        j = k + shift
        if c == -1.0:
            j, c = j - 1, 0.0
        if c == 0.0:
            return lam[j] if j <= n else np.zeros(3)
        if j - 1 >= n:
            return np.zeros(3)
        return hermite_mid(lam[j - 1], lam[j], dlam[j - 1], dlam[j], h)

    def g(k, c, L):
        if c == -1.0:
            S, I, V = X[k - 1]
            mu11, mu12, mu21, mu22 = U[k - 1]
        else:
            S, I, V = state(k, c)
            mu11, mu12, mu21, mu22 = ctrl(k, c)
        l1, l2, l3 = L
        l2_tau = advanced(k, c, m1, L)[1]
        lt1 = advanced(k, c, m2, L)
        return np.array([
            l1 * (p.beta * V + p.mu) - l2_tau * p.beta * V,
            -1.0 + l2 * (cI + a * mu12) - l3 * p.b + lt1[1] * eps1 * mu11,
            -1.0 + l1 * p.beta * S + l3 * (cV + a * mu22)
            - l2_tau * p.beta * S + lt1[2] * eps1 * mu21,
        ])

    for k in range(n, 0, -1):
        L = lam[k]
        k1 = g(k, 0.0, L)
        dlam[k] = k1
        k2 = g(k, -0.5, L - 0.5 * h * k1)
        k3 = g(k, -0.5, L - 0.5 * h * k2)
        k4 = g(k, -1.0, L - h * k3)
        nxt = L - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(grid.t0 + (k - 1) * h, "non-finite adjoint")
        lam[k - 1] = nxt
    dlam[0] = g(0, 0.0, lam[0])
    return AdjointTrajectory(grid=grid, lambdas=lam, derivs=dlam)


def _advanced_nodes(adj: AdjointTrajectory, shift: int) -> np.ndarray:
    n = adj.grid.n
    return adj.lambdas[shift: shift + n + 1]


def characterize_controls(traj: Trajectory, adjoint: AdjointTrajectory,
                          cfg: OcpConfig) -> ControlSchedule:
    """Projected stationarity formulas, node by node."""
    p = cfg.params
    X = traj.window
    lam = adjoint.window
    lam_t1 = _advanced_nodes(adjoint, traj.grid.m2)
    I, V = X[:, 1], X[:, 2]
    raw = np.column_stack([
        p.epsilon1 * lam_t1[:, 1] * I / (2.0 * cfg.A1),
        p.alpha * lam[:, 1] * I / (2.0 * cfg.A2),
        p.epsilon1 * lam_t1[:, 2] * V / (2.0 * cfg.A1),
        p.alpha * lam[:, 2] * V / (2.0 * cfg.A2),
    ])
    bounds = np.asarray(cfg.bounds)
    return ControlSchedule(traj.grid, np.clip(raw, 0.0, bounds), bounds=bounds)


def control_gradient(traj: Trajectory, adjoint: AdjointTrajectory, u: ControlSchedule,
                     cfg: OcpConfig) -> np.ndarray:
    """``dH/du`` per node, including the advanced contribution of lagged controls.

    ``h * control_gradient[k]`` approximates the sensitivity of the cost
    to the control value at interior node ``k``.
    """
    p = cfg.params
    X = traj.window
    lam = adjoint.window
    lam_t1 = _advanced_nodes(adjoint, traj.grid.m2)
    c = u.controls
    I, V = X[:, 1], X[:, 2]
    return np.column_stack([
        2.0 * cfg.A1 * c[:, 0] - p.epsilon1 * lam_t1[:, 1] * I,
        2.0 * cfg.A2 * c[:, 1] - p.alpha * lam[:, 1] * I,
        2.0 * cfg.A1 * c[:, 2] - p.epsilon1 * lam_t1[:, 2] * V,
        2.0 * cfg.A2 * c[:, 3] - p.alpha * lam[:, 2] * V,
    ])


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    diff = float(np.max(np.abs(new - old))) if new.size else 0.0
    if diff == 0.0:
        return 0.0
    scale = max(float(np.max(np.abs(new))), float(np.max(np.abs(old))))
    return diff / scale


def fbsm_solve(cfg: OcpConfig, history: Sequence[float],
               initial: Optional[ControlSchedule] = None) -> OcpSolution:
    """Forward-backward sweep with relaxation and cost safeguarding.

    A relaxed update is accepted only if it does not raise the cost; on a
    rise the relaxation weight is halved and the step retried.  Convergence
    is declared when the characterization moves no node by more than
    ``tol`` relative to the sup-norm of the controls.
    """
    p = cfg.params
    grid = cfg.grid
    bounds = np.asarray(cfg.bounds)
    u = initial if initial is not None else ControlSchedule.zeros(grid, bounds=bounds)

    def forward(sched):
        traj = simulate(p, history, grid, sched, positivity="clamp")
        return traj, evaluate_cost(traj, sched, cfg.A1, cfg.A2)

    traj, cost = forward(u)
    adj = adjoint_backward(p, traj, u)
    history_costs = [cost]
    converged = False
    change = float("nan")
    backtracks = 0
    stalled = False
    iterations = 0

    while iterations < cfg.max_iters:
        iterations += 1
        target = characterize_controls(traj, adj, cfg)
        change = _rel_change(target.controls, u.controls)
        if change <= cfg.tol:
            converged = True
            break
        w = cfg.relaxation
        while True:
            trial = ControlSchedule(grid, np.clip((1 - w) * u.controls + w * target.controls,
                                                  0.0, bounds), bounds=bounds)
            t_traj, t_cost = forward(trial)
            if t_cost <= cost + COST_SLACK * max(1.0, abs(cost)):
                break
            w *= 0.5
            backtracks += 1
            if w < 1e-6:
                stalled = True
                break
        if stalled:
            log.info("fbsm stalled after %d iterations (change %.3g)", iterations, change)
            break
        u, traj, cost = trial, t_traj, t_cost
        adj = adjoint_backward(p, traj, u)
        history_costs.append(cost)

    return OcpSolution(
        controls=u, state=traj, adjoint=adj, cost=cost, iterations=iterations,
        converged=converged, cost_history=history_costs,
        diagnostics={"final_change": change, "backtracks": backtracks,
                     "stalled": stalled, "clamp_events": traj.clamp_events},
    )
