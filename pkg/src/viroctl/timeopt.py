"""Minimum-time drug scheduling by costate shooting.

State and costate are integrated forward together from a candidate initial
costate.  Controls are bang-bang, chosen node by node from the signs of the
switching functions, and held over each step.  A run stops when the state
enters a box around the target.  A grid of candidate initial costates is
searched and the fastest arrival kept.

The costate equations contain advanced arguments ``lambda(t + tau)`` and
``lambda(t + tau1)`` that are unknown during a forward pass; they are
replaced by ``lambda(t)``.  With both delays zero this is the ordinary
Pontryagin system.  The Hamiltonian trace is recorded so the effect of the
closure can be inspected.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dde import ConfigurationError, ControlSchedule, Grid, Trajectory, hermite_mid
from .model import CONTROL_NAMES, ModelParams, rhs_controlled
from .ocp import AdjointTrajectory

__all__ = [
    "TimeOptConfig",
    "SwitchingState",
    "SwitchReport",
    "TimeOptSolution",
    "SearchResult",
    "TerminalReport",
    "bang_bang_controls",
    "hamiltonian",
    "costate_rhs",
    "forward_shoot",
    "shoot_search",
    "detect_switches",
    "terminal_residuals",
    "terminal_condition_check",
    "sphere_directions",
    "normalized_lambda0",
    "lambda0_grid_from_directions",
]

log = logging.getLogger(__name__)

_OVERFLOW = 1e250
SINGULAR_REL = 1e-12
SINGULAR_RUN = 3
PAIRINGS = ("printed", "advanced")
CLOSURE_NOTE = "advanced costate arguments replaced by the current costate"


@dataclass(frozen=True)
class TimeOptConfig:
    params: ModelParams
    bounds: tuple
    initial: tuple
    target: Optional[tuple] = None
    target_radius: tuple = (0.2, 0.1, 0.1)
    lambda0_grid: tuple = ()
    t_max: float = 60.0
    h: float = 0.01
    h_tol: float = 0.1
    switching_pairing: str = "printed"

    def __post_init__(self):
        b = np.broadcast_to(np.asarray(self.bounds, dtype=float), (4,))
        object.__setattr__(self, "bounds", tuple(float(v) for v in b))
        object.__setattr__(self, "initial", tuple(float(v) for v in self.initial))
        if self.target is None:
            object.__setattr__(self, "target", (self.params.omega / self.params.mu, 0.0, 0.0))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        r = np.broadcast_to(np.asarray(self.target_radius, dtype=float), (3,))
        object.__setattr__(self, "target_radius", tuple(float(v) for v in r))
        object.__setattr__(self, "lambda0_grid",
                           tuple(tuple(float(v) for v in lam) for lam in self.lambda0_grid))
        if len(self.initial) != 3 or any(v < 0 or not math.isfinite(v) for v in self.initial):
            raise ConfigurationError("initial must be a nonnegative (S, I, V)")
        if len(self.target) != 3:
            raise ConfigurationError("target must be (S, I, V)")
        if any(v <= 0 for v in self.target_radius):
            raise ConfigurationError("target_radius must be positive")
        if any(v < 0 or not math.isfinite(v) for v in self.bounds):
            raise ConfigurationError("bounds must be finite and >= 0")
        if any(len(lam) != 3 for lam in self.lambda0_grid):
            raise ConfigurationError("each lambda0 must have three components")
        if not (self.t_max > 0 and self.h > 0 and self.h_tol > 0):
            raise ConfigurationError("t_max, h and h_tol must be positive")
        if self.switching_pairing not in PAIRINGS:
            raise ConfigurationError(
                f"switching_pairing must be one of {PAIRINGS}, got {self.switching_pairing!r}")
        Grid.for_params(self.params, 0.0, self.h)


@dataclass
class SwitchingState:
    """Switching products on nodes ``t_0..t_T``."""

    phi1: np.ndarray
    phi1_delayed: np.ndarray
    phi2: np.ndarray
    phi2_delayed: np.ndarray

    def for_controls(self, pairing: str = "printed") -> np.ndarray:
        """Columns governing ``(mu11, mu12, mu21, mu22)``."""
        if pairing == "printed":
            return np.column_stack([self.phi1_delayed, self.phi1, self.phi2_delayed, self.phi2])
        return np.column_stack([self.phi1, self.phi1, self.phi2, self.phi2])


@dataclass
class SwitchReport:
    times: List[float]
    suspected_singular: bool
    longest_zero_run: int


@dataclass
class TimeOptSolution:
    T: float
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    controls: ControlSchedule
    switching: SwitchingState
    switch_times: Dict[str, List[float]]
    switch_directions: Dict[str, List[str]]
    singular_flags: Dict[str, bool]
    hamiltonian_trace: np.ndarray
    lambda0: tuple
    reached: bool
    mean_abs_H: float
    degraded: bool
    failed: bool = False
    message: str = ""
    min_scaled_distance: float = math.inf
    metadata: dict = field(default_factory=dict)

    @property
    def n_switches(self) -> int:
        return sum(len(v) for v in self.switch_times.values())

    def summary(self) -> dict:
        return {
            "T": self.T,
            "reached": self.reached,
            "switch_times": self.switch_times,
            "switch_directions": self.switch_directions,
            "n_switches": self.n_switches,
            "lambda0": list(self.lambda0),
            "mean_abs_H": self.mean_abs_H,
            "degraded": self.degraded,
            "failed": self.failed,
            "message": self.message,
            "singular_flags": self.singular_flags,
            "initial_controls": self.controls.controls[0].tolist() if len(self.controls.controls) else [],
            "metadata": dict(self.metadata),
        }

    def table(self) -> np.ndarray:
        """Rows ``t,S,I,V,l1,l2,l3,mu11,mu12,mu21,mu22,phi1,phi2,H``."""
        g = self.trajectory.grid
        return np.column_stack([
            g.times(0, g.n), self.trajectory.window, self.adjoint.window,
            self.controls.controls, self.switching.phi1, self.switching.phi2,
            self.hamiltonian_trace,
        ])


CSV_COLUMNS = ("t", "S", "I", "V", "l1", "l2", "l3", "mu11", "mu12", "mu21", "mu22",
               "phi1", "phi2", "H")


@dataclass
class SearchResult:
    solution: Optional[TimeOptSolution]
    candidates: List[dict]
    near_miss: Optional[dict] = None

    @property
    def reached(self) -> bool:
        return self.solution is not None

    def summary(self) -> dict:
        out = {"reached": self.reached, "n_candidates": len(self.candidates),
               "n_reached": sum(c["reached"] for c in self.candidates),
               "n_degraded": sum(c["reached"] and c["degraded"] for c in self.candidates)}
        if self.solution is not None:
            out.update(self.solution.summary())
        else:
            out["near_miss"] = self.near_miss
        return out


def bang_bang_controls(state_now, state_tau1, lam, bounds, prev=None,
                       pairing: str = "printed") -> np.ndarray:
    """Extreme control values from switching-product signs.

    A product of exactly zero keeps the previous value (0 when there is none).
    """
    _, I, V = state_now
    _, I_d, V_d = state_tau1
    l2, l3 = lam[1], lam[2]
    if pairing == "printed":
        phi = (l2 * I_d, l2 * I, l3 * V_d, l3 * V)
    else:
        phi = (l2 * I, l2 * I, l3 * V, l3 * V)
    bounds = np.broadcast_to(np.asarray(bounds, dtype=float), (4,))
    prev = np.zeros(4) if prev is None else np.asarray(prev, dtype=float)
    out = np.empty(4)
    for i, v in enumerate(phi):
        out[i] = bounds[i] if v > 0 else (0.0 if v < 0 else prev[i])
    return out


def hamiltonian(state_now, state_tau, state_tau1, u_now, u_tau1, lam, p: ModelParams) -> float:
    """``1 + lambda . f`` for the minimum-time problem."""
    f = rhs_controlled(state_now, state_tau, state_tau1, u_now, u_tau1, p)
    return 1.0 + float(np.dot(lam, f))


def costate_rhs(state, lam, u, p: ModelParams) -> np.ndarray:
    """Costate derivative with advanced arguments taken at the current time."""
    S, I, V = state
    l1, l2, l3 = lam
    mu11, mu12, mu21, mu22 = u
    e1, a = p.epsilon1, p.alpha
    return np.array([
        l1 * (p.beta * V + p.mu) - l2 * p.beta * V,
        l2 * (p.x + p.mu + a * mu12) - l3 * p.b + l2 * e1 * mu11,
        l1 * p.beta * S + l3 * (p.mu1 + p.y + a * mu22) - l2 * p.beta * S + l3 * e1 * mu21,
    ])


def detect_switches(trace, times, mask=None, scale=None) -> SwitchReport:
    """Sign changes of a node-wise trace.

    A crossing is placed by linear interpolation between the last nonzero
    node and the next nonzero node of opposite sign.  Runs of more than
    three near-zero nodes (``|phi| <= 1e-12 * scale``) are flagged; ``scale``
    may be per node and defaults to ``max|phi|``.  Nodes where ``mask`` is
    False are ignored by the zero-run check.
    """
    trace = np.asarray(trace, dtype=float)
    times = np.asarray(times, dtype=float)
    if scale is None:
        scale = float(np.max(np.abs(trace))) if trace.size else 0.0
    tiny = SINGULAR_REL * np.asarray(scale, dtype=float)
    switches = []
    last = None
    for i, v in enumerate(trace):
        if v == 0.0:
            continue
        if last is not None and (v > 0) != (trace[last] > 0):
            frac = trace[last] / (trace[last] - v)
            switches.append(float(times[last] + frac * (times[i] - times[last])))
        last = i
    near_zero = np.abs(trace) <= tiny
    if mask is not None:
        near_zero &= np.asarray(mask, dtype=bool)
    longest = run = 0
    for z in near_zero:
        run = run + 1 if z else 0
        longest = max(longest, run)
    return SwitchReport(times=switches, suspected_singular=longest > SINGULAR_RUN,
                        longest_zero_run=longest)


def _scaled_distance(x, target, radius) -> float:
    return float(np.max(np.abs(np.asarray(x) - target) / radius))


def forward_shoot(cfg: TimeOptConfig, lambda0) -> TimeOptSolution:
    """Co-integrate state and costate from ``(initial, lambda0)`` with RK4."""
    p = cfg.params
    h = cfg.h
    base = Grid.for_params(p, 0.0, h)
    m1, m2 = base.m1, base.m2
    off = max(m1, m2)
    nmax = int(math.floor(cfg.t_max / h + 1e-9))
    target = np.asarray(cfg.target)
    radius = np.asarray(cfg.target_radius)
    bounds = np.asarray(cfg.bounds)
    x0 = np.asarray(cfg.initial, dtype=float)

    X = np.empty((nmax + off + 1, 3))
    X[: off + 1] = x0
    dX = np.zeros((nmax + off + 1, 3))
    L = np.empty((nmax + 1, 3))
    L[0] = np.asarray(lambda0, dtype=float)
    U = np.zeros((nmax + 1, 4))
    Hs = np.empty(nmax + 1)
    lam_f = np.empty((nmax + 1, 3))

    def xd(k, c, m, stage):
        # state at t_k + c h - m h
        if m == 0:
            return stage
        j = k - m
        if c == 1.0:
            j, c = j + 1, 0.0
        if j < 0:
            return x0
        if c == 0.0:
            return X[off + j]
        return hermite_mid(X[off + j], X[off + j + 1], dX[off + j], dX[off + j + 1], h)

    def ulag(k):
        j = k - m2
        return U[j] if j >= 0 else np.zeros(4)

    def f_state(k, c, y, u_now, u_lag):
        return rhs_controlled(y, xd(k, c, m1, y), xd(k, c, m2, y), u_now, u_lag, p)

    reached = failed = False
    message = ""
    T = math.nan
    k_end = nmax
    best_dist = _scaled_distance(x0, target, radius)
    prev = None

    for k in range(nmax + 1):
        y, lam = X[off + k], L[k]
        state_t1 = xd(k, 0.0, m2, y)
        u = bang_bang_controls(y, state_t1, lam, bounds, prev, cfg.switching_pairing)
        U[k] = u
        prev = u
        u_lag = u if m2 == 0 else ulag(k)
        fy = f_state(k, 0.0, y, u, u_lag)
        dX[off + k] = fy
        Hs[k] = 1.0 + float(np.dot(lam, fy))
        dist = _scaled_distance(y, target, radius)
        best_dist = min(best_dist, dist)
        if dist <= 1.0:
            reached = True
            k_end = k
            T = k * h if k == 0 else _refine_entry(X, dX, off, k, h, target, radius,
                                                    f_state, U, ulag, m2)
            break
        if k == nmax:
            break
        # RK4 over [t_k, t_{k+1}] with the controls held
        def F(c, z):
            ys, ls = z[:3], z[3:]
            return np.concatenate([f_state(k, c, ys, u, u_lag), costate_rhs(ys, ls, u, p)])
        z = np.concatenate([y, lam])
        k1 = np.concatenate([fy, costate_rhs(y, lam, u, p)])
        k2 = F(0.5, z + 0.5 * h * k1)
        k3 = F(0.5, z + 0.5 * h * k2)
        k4 = F(1.0, z + h * k3)
        z_next = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(z_next)) or np.any(np.abs(z_next) > _OVERFLOW):
            failed = True
            message = f"divergence at t={(k + 1) * h:.6g}"
            k_end = k
            break
        X[off + k + 1] = np.maximum(z_next[:3], 0.0)
        L[k + 1] = z_next[3:]

    n = k_end
    grid = Grid.build(n * h, h, p.tau, p.tau1)
    m = grid.m
    states = np.empty((n + m + 1, 3))
    states[:m] = x0
    states[m:] = X[off: off + n + 1]
    traj = Trajectory(grid=grid, states=states, history=x0, derivs=dX[off: off + n + 1].copy())
    lam_full = np.zeros((n + m + 1, 3))
    lam_full[: n + 1] = L[: n + 1]
    adjoint = AdjointTrajectory(grid=grid, lambdas=lam_full)
    controls = ControlSchedule(grid, U[: n + 1].copy(), bounds=bounds)
    Xw = traj.window
    Xl = np.array([xd(k, 0.0, m2, Xw[k]) for k in range(n + 1)]) if m2 else Xw
    lw = L[: n + 1]
    sw = SwitchingState(phi1=lw[:, 1] * Xw[:, 1], phi1_delayed=lw[:, 1] * Xl[:, 1],
                        phi2=lw[:, 2] * Xw[:, 2], phi2_delayed=lw[:, 2] * Xl[:, 2])
    H = Hs[: n + 1].copy()
    times = grid.times(0, n)
    phis = sw.for_controls(cfg.switching_pairing)
    state_cols = (Xl[:, 1], Xw[:, 1], Xl[:, 2], Xw[:, 2]) if cfg.switching_pairing == "printed" \
        else (Xw[:, 1], Xw[:, 1], Xw[:, 2], Xw[:, 2])
    lam_scale = np.max(np.abs(lw), axis=1)
    switch_times, directions, singular = {}, {}, {}
    for i, name in enumerate(CONTROL_NAMES):
        # a product can only vanish through its costate factor off the boundary
        rep = detect_switches(phis[:, i], times, mask=state_cols[i] > 0,
                              scale=lam_scale * np.abs(state_cols[i]))
        switch_times[name] = rep.times
        singular[name] = rep.suspected_singular
        col = U[: n + 1, i]
        changes = np.nonzero(np.diff(col))[0]
        directions[name] = ["max->0" if col[j] > col[j + 1] else "0->max" for j in changes]
    mean_h = float(np.mean(np.abs(H))) if H.size else math.nan
    return TimeOptSolution(
        T=float(T), trajectory=traj, adjoint=adjoint, controls=controls, switching=sw,
        switch_times=switch_times, switch_directions=directions, singular_flags=singular,
        hamiltonian_trace=H, lambda0=tuple(float(v) for v in lambda0), reached=reached,
        mean_abs_H=mean_h, degraded=bool(reached and not mean_h <= cfg.h_tol),
        failed=failed, message=message, min_scaled_distance=best_dist,
        metadata={"costate_closure": CLOSURE_NOTE, "pairing": cfg.switching_pairing,
                  "max_abs_lambda": float(np.max(np.abs(lw))) if lw.size else 0.0},
    )


def _refine_entry(X, dX, off, k, h, target, radius, f_state, U, ulag, m2) -> float:
    """Bisection on the Hermite interpolant over the step that enters the box."""
    y0, y1 = X[off + k - 1], X[off + k]
    d0 = dX[off + k - 1]
    u = U[k - 1]
    d1 = f_state(k - 1, 1.0, y1, u, u if m2 == 0 else ulag(k - 1))

    def inside(theta):
        t = theta
        h00 = 2 * t ** 3 - 3 * t ** 2 + 1
        h10 = t ** 3 - 2 * t ** 2 + t
        h01 = -2 * t ** 3 + 3 * t ** 2
        h11 = t ** 3 - t ** 2
        y = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
        return _scaled_distance(y, target, radius) <= 1.0

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if inside(mid):
            hi = mid
        else:
            lo = mid
    return (k - 1 + hi) * h


def _candidate_row(sol: TimeOptSolution) -> dict:
    return {"lambda0": list(sol.lambda0), "reached": sol.reached, "T": sol.T,
            "mean_abs_H": sol.mean_abs_H, "degraded": sol.degraded, "failed": sol.failed,
            "n_switches": sol.n_switches, "min_scaled_distance": sol.min_scaled_distance}


def _shoot_one(args):
    cfg, lam = args
    return forward_shoot(cfg, lam)


def shoot_search(cfg: TimeOptConfig, workers: Optional[int] = None) -> SearchResult:
    """Shoot from every candidate and keep the reached one minimising ``(T, mean|H|)``.

    Candidates are evaluated in grid order (optionally in a process pool)
    and reduced in that order, so the result does not depend on scheduling.
    """
    if not cfg.lambda0_grid:
        raise ConfigurationError("lambda0_grid is empty")
    jobs = [(cfg, lam) for lam in cfg.lambda0_grid]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            sols = list(pool.map(_shoot_one, jobs))
    else:
        sols = [_shoot_one(j) for j in jobs]
    rows = [_candidate_row(s) for s in sols]
    best = None
    for s in sols:
        if not s.reached:
            continue
        if best is None or (s.T, s.mean_abs_H) < (best.T, best.mean_abs_H):
            best = s
    near = None
    if best is None:
        near = min(rows, key=lambda r: r["min_scaled_distance"])
    return SearchResult(solution=best, candidates=rows, near_miss=near)


@dataclass
class TerminalReport:
    H_T: float
    residual: float
    lambda3_T: float
    terminal_sign_ok: bool
    within_h_tol: bool


def terminal_residuals(lam, f) -> tuple:
    """``(1 + lambda.f, 1 + lambda2 dI/dt + lambda3 dV/dt)`` at the terminal time."""
    lam = np.asarray(lam, dtype=float)
    f = np.asarray(f, dtype=float)
    return 1.0 + float(lam @ f), 1.0 + float(lam[1] * f[1] + lam[2] * f[2])


def terminal_condition_check(sol: TimeOptSolution, p: ModelParams,
                             h_tol: float = 0.1) -> TerminalReport:
    """Diagnostics at the last node; nothing here rejects a solution."""
    lam = sol.adjoint.window[-1]
    f = sol.trajectory.derivs[-1]
    H_T, res = terminal_residuals(lam, f)
    vdot = abs(float(f[2]))
    upper = math.inf if vdot == 0 else 1.0 / vdot
    l3 = float(lam[2])
    return TerminalReport(H_T=H_T, residual=res, lambda3_T=l3,
                          terminal_sign_ok=bool(0.0 < l3 < upper), within_h_tol=abs(H_T) <= h_tol)


def sphere_directions(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors (Fibonacci lattice), deterministic."""
    if n < 1:
        raise ConfigurationError("need at least one direction")
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def normalized_lambda0(cfg: TimeOptConfig, direction) -> Optional[np.ndarray]:
    """Positive multiple of ``direction`` with ``H(0) = 0``, or None if impossible.

    The controls at ``t = 0`` depend only on the sign pattern of the
    costate, so they are fixed before scaling.
    """
    d = np.asarray(direction, dtype=float)
    p = cfg.params
    x0 = np.asarray(cfg.initial)
    u = bang_bang_controls(x0, x0, d, cfg.bounds, None, cfg.switching_pairing)
    grid = Grid.for_params(p, 0.0, cfg.h)
    u_lag = u if grid.m2 == 0 else np.zeros(4)
    f0 = rhs_controlled(x0, x0, x0, u, u_lag, p)
    s = float(d @ f0)
    if not s < 0:
        return None
    return -d / s


def lambda0_grid_from_directions(cfg: TimeOptConfig, directions) -> tuple:
    out = []
    for d in directions:
        lam = normalized_lambda0(cfg, d)
        if lam is not None:
            out.append(tuple(float(v) for v in lam))
    return tuple(out)
