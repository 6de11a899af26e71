"""Stability classification of the infection-free and infected equilibria.

For ``tau = 0`` the characteristic polynomials are solved directly.  For
``tau > 0`` the delay-independent criterion is used: a root can only cross
the imaginary axis at ``lambda = i w`` with ``w > 0`` a positive real root
of ``|P(i w)|^2 - |Q(i w)|^2``.  If that polynomial (in ``w^2``) has no
positive root, stability at ``tau = 0`` persists for every delay.

All polynomial roots come from companion-matrix eigenvalues (``np.roots``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dde import Grid, simulate
from .model import ModelParams, compute_r0, equilibria

__all__ = [
    "CharCoeffs",
    "OmegaPoly",
    "StabilityReport",
    "PreconditionError",
    "char_coeffs",
    "e0_tau0_eigs",
    "e0_omega_poly",
    "e0_report",
    "e1_tau0_eigs",
    "e1_delay_independent",
    "sextic_verdict",
    "positive_real_omegas",
    "poly_residual_ok",
    "stability_cross_check",
]

IMAG_TOL = 1e-9
POS_TOL = 1e-9


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class CharCoeffs:
    s: float
    m: float
    C: Optional[float] = None
    E: Optional[float] = None
    D: Optional[float] = None


@dataclass(frozen=True)
class OmegaPoly:
    """Polynomial in ``z = w^2`` (highest degree first) and its roots."""

    coeffs: tuple
    z_roots: tuple
    positive_omegas: tuple


@dataclass
class StabilityReport:
    point: str
    r0: float
    tau_zero_eigs: List[complex]
    delay_independent: bool
    omega_poly_positive_roots: List[float]
    conditions: Dict[str, bool]
    values: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "r0": self.r0,
            "tau_zero_eigs": [[float(z.real), float(z.imag)] for z in self.tau_zero_eigs],
            "delay_independent": self.delay_independent,
            "omega_poly_positive_roots": [float(w) for w in self.omega_poly_positive_roots],
            "conditions": dict(self.conditions),
            "values": {k: float(v) for k, v in self.values.items()},
        }


def char_coeffs(p: ModelParams) -> CharCoeffs:
    """``s``, ``m`` always; ``C``, ``E``, ``D`` when E1 exists."""
    s = p.x + p.y + p.mu + p.mu1
    m = (p.x + p.mu) * (p.y + p.mu1)
    eq = equilibria(p)
    if eq.e1 is None:
        return CharCoeffs(s=s, m=m)
    S1, _, V1 = eq.e1
    return CharCoeffs(
        s=s, m=m,
        C=p.beta * V1 + p.mu,
        E=p.beta * p.b * S1,
        D=p.beta ** 2 * p.b * S1 * V1,
    )


def positive_real_omegas(z_roots: Sequence[complex]) -> List[float]:
    """``w = sqrt(z)`` for every numerically real, strictly positive ``z``."""
    out = []
    for z in z_roots:
        z = complex(z)
        if abs(z.imag) <= IMAG_TOL and z.real > POS_TOL:
            out.append(float(np.sqrt(z.real)))
    return sorted(out)


def poly_residual_ok(coeffs, root, tol: float = 1e-9) -> bool:
    """``|poly(r)| <= tol * (1 + |r|^deg)``, relative to the coefficient scale."""
    coeffs = np.asarray(coeffs, dtype=float)
    deg = len(coeffs) - 1
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    return abs(np.polyval(coeffs, root)) <= tol * scale * (1.0 + abs(root) ** deg)


def _roots(coeffs) -> np.ndarray:
    return np.roots(np.asarray(coeffs, dtype=float))


def e0_tau0_eigs(p: ModelParams) -> List[complex]:
    """Eigenvalues at E0 without delay: ``-mu`` and a quadratic pair."""
    cc = char_coeffs(p)
    r0 = compute_r0(p)
    quad = [1.0, cc.s, -(r0 - 1.0) * cc.m]
    return [complex(-p.mu)] + [complex(z) for z in _roots(quad)]


def e0_omega_poly(p: ModelParams) -> OmegaPoly:
    """``w^4 + (s^2 - 2m) w^2 + m^2 (1 - R0^2)`` solved as a quadratic in ``w^2``."""
    cc = char_coeffs(p)
    r0 = compute_r0(p)
    coeffs = (1.0, cc.s ** 2 - 2.0 * cc.m, cc.m ** 2 * (1.0 - r0 ** 2))
    z = tuple(complex(r) for r in _roots(coeffs))
    return OmegaPoly(coeffs=coeffs, z_roots=z, positive_omegas=tuple(positive_real_omegas(z)))


def e0_report(p: ModelParams) -> StabilityReport:
    r0 = compute_r0(p)
    eigs = e0_tau0_eigs(p)
    poly = e0_omega_poly(p)
    cc = char_coeffs(p)
    tau0_stable = max(z.real for z in eigs) < 0
    conditions = {
        "tau0_stable": tau0_stable,
        "s2_minus_2m_positive": poly.coeffs[1] > 0,
        "r0_below_one": r0 < 1.0,
        "no_positive_omega": not poly.positive_omegas,
    }
    return StabilityReport(
        point="E0",
        r0=r0,
        tau_zero_eigs=eigs,
        delay_independent=tau0_stable and not poly.positive_omegas,
        omega_poly_positive_roots=list(poly.positive_omegas),
        conditions=conditions,
        values={"s": cc.s, "m": cc.m, "s2_minus_2m": poly.coeffs[1],
                "omega_poly_constant": poly.coeffs[2]},
    )


def _require_e1(p: ModelParams) -> CharCoeffs:
    cc = char_coeffs(p)
    if cc.C is None:
        raise PreconditionError(f"E1 does not exist (R0 = {compute_r0(p):.6g} <= 1)")
    return cc


def e1_tau0_eigs(p: ModelParams) -> List[complex]:
    """Roots of ``l^3 + (s + mu R0) l^2 + s mu R0 l + m mu (R0 - 1)``."""
    cc = _require_e1(p)
    r0 = compute_r0(p)
    cubic = [1.0, cc.s + p.mu * r0, cc.s * p.mu * r0, cc.m * p.mu * (r0 - 1.0)]
    return [complex(z) for z in _roots(cubic)]


def sextic_verdict(A: float, B: float, K: float) -> bool:
    """All coefficients of ``z^3 + A z^2 + B z + K`` positive: no root ``z >= 0``."""
    return A > 0 and B > 0 and K > 0


def e1_delay_independent(p: ModelParams) -> StabilityReport:
    cc = _require_e1(p)
    r0 = compute_r0(p)
    s, m, C, E, D = cc.s, cc.m, cc.C, cc.E, cc.D
    A = (s + C) ** 2 - 2.0 * (s * C + m)
    B = (s * C + m) ** 2 - 2.0 * m * C * (s + C) - E ** 2
    K = m ** 2 * C ** 2 - (D - E * C) ** 2
    z = _roots([1.0, A, B, K])
    omegas = positive_real_omegas(z)
    eigs = e1_tau0_eigs(p)
    conditions = {
        "A_positive": A > 0,
        "B_positive": B > 0,
        "constant_positive": K > 0,
        "tau0_stable": max(e.real for e in eigs) < 0,
    }
    return StabilityReport(
        point="E1",
        r0=r0,
        tau_zero_eigs=eigs,
        delay_independent=sextic_verdict(A, B, K) and conditions["tau0_stable"],
        omega_poly_positive_roots=omegas,
        conditions=conditions,
        values={"s": s, "m": m, "C": C, "E": E, "D": D, "A": A, "B": B, "constant": K},
    )


@dataclass
class CrossCheckRun:
    tau: float
    start: List[float]
    final: List[float]
    max_rel_dev: float
    converged: bool


@dataclass
class CrossCheck:
    point: str
    equilibrium: List[float]
    analytic_stable: bool
    runs: List[CrossCheckRun]

    @property
    def agree(self) -> bool:
        return all(r.converged == self.analytic_stable for r in self.runs)

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "equilibrium": self.equilibrium,
            "analytic_stable": self.analytic_stable,
            "agree": self.agree,
            "runs": [vars(r) for r in self.runs],
        }


def stability_cross_check(p: ModelParams, tau_list: Sequence[float], horizon: float,
                          h: float = 0.01, perturbation: float = 0.05,
                          start: Optional[Sequence[float]] = None,
                          threshold: float = 1e-2) -> CrossCheck:
    """Simulate from near the analytically stable equilibrium for each delay.

    The start is ``eq * (1 + perturbation) + perturbation`` unless ``start``
    is given.  A run converges when every component is within ``threshold``
    of the equilibrium, relative to ``max(|eq_i|, 1)``.
    """
    eq = equilibria(p)
    if eq.e1 is not None:
        point, target = "E1", np.array(eq.e1)
        analytic = e1_delay_independent(p).delay_independent
    else:
        point, target = "E0", np.array(eq.e0)
        analytic = e0_report(p).delay_independent
    x0 = (np.asarray(start, dtype=float) if start is not None
          else target * (1.0 + perturbation) + perturbation)
    runs = []
    for tau in tau_list:
        pt = p.with_(tau=float(tau))
        traj = simulate(pt, x0, Grid.for_params(pt, horizon, h))
        dev = np.abs(traj.final - target) / np.maximum(np.abs(target), 1.0)
        runs.append(CrossCheckRun(
            tau=float(tau), start=x0.tolist(), final=traj.final.tolist(),
            max_rel_dev=float(dev.max()), converged=bool(dev.max() < threshold)))
    return CrossCheck(point=point, equilibrium=target.tolist(),
                      analytic_stable=analytic, runs=runs)
