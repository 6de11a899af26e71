"""Within-host SIV delay model: parameters, right-hand sides, R0 and equilibria.

State vectors are ``(S, I, V)``: healthy pneumocytes, infected pneumocytes and
viral load.  Control vectors are ``(mu11, mu12, mu21, mu22)``, where the
``*1`` pair is the first-line (antiviral) drug and the ``*2`` pair the
second-line drug; ``mu11``/``mu12`` act on infected cells and
``mu21``/``mu22`` on the virus.

The removal aggregates follow the convention used by the threshold and
stability algebra: ``x = b1 + ... + b6`` multiplies ``I`` and
``y = d1 + ... + d6`` multiplies ``V``, so that

    dS/dt = omega - beta S V - mu S
    dI/dt = beta S(t-tau) V(t-tau) - (x + mu) I
    dV/dt = b I - (y + mu1) V
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "ParameterError",
    "ModelParams",
    "AggregateRates",
    "State",
    "EquilibriumSet",
    "CONTROL_NAMES",
    "aggregate_rates",
    "rhs_uncontrolled",
    "rhs_controlled",
    "compute_r0",
    "r0_oracle_ngm",
    "equilibria",
    "cleared_params",
    "endemic_params",
    "treatment_params",
]

CONTROL_NAMES = ("mu11", "mu12", "mu21", "mu22")


class ParameterError(ValueError):
    """Invalid model parameter; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ModelParams:
    """Rate constants, delays and drug adverse-event probability."""

    omega: float
    beta: float
    mu: float
    mu1: float
    b: float
    d1: float = 0.0
    d2: float = 0.0
    d3: float = 0.0
    d4: float = 0.0
    d5: float = 0.0
    d6: float = 0.0
    b1: float = 0.0
    b2: float = 0.0
    b3: float = 0.0
    b4: float = 0.0
    b5: float = 0.0
    b6: float = 0.0
    tau: float = 0.0
    tau1: float = 0.0
    alpha: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ParameterError(f.name, f"expected a number, got {value!r}")
            if not math.isfinite(value):
                raise ParameterError(f.name, f"must be finite, got {value!r}")
            if value < 0:
                raise ParameterError(f.name, f"must be >= 0, got {value!r}")
            object.__setattr__(self, f.name, float(value))
        if self.alpha > 1:
            raise ParameterError("alpha", f"must lie in [0, 1], got {self.alpha!r}")

    @property
    def epsilon1(self) -> float:
        """Efficacy of the first-line drug, ``1 - alpha``."""
        return 1.0 - self.alpha

    @property
    def x(self) -> float:
        return self.b1 + self.b2 + self.b3 + self.b4 + self.b5 + self.b6

    @property
    def y(self) -> float:
        return self.d1 + self.d2 + self.d3 + self.d4 + self.d5 + self.d6

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(unknown[0], "unknown parameter")
        missing = [n for n in ("omega", "beta", "mu", "mu1", "b") if n not in data]
        if missing:
            raise ParameterError(missing[0], "missing required parameter")
        return cls(**data)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def scaled_time(self, c: float) -> "ModelParams":
        """Same model with time measured in units ``1/c`` of the original."""
        rates = {f.name: getattr(self, f.name) * c for f in fields(self)
                 if f.name not in ("tau", "tau1", "alpha")}
        return replace(self, tau=self.tau / c, tau1=self.tau1 / c, **rates)


class AggregateRates(NamedTuple):
    x: float
    y: float


class State(NamedTuple):
    S: float
    I: float
    V: float


@dataclass(frozen=True)
class EquilibriumSet:
    e0: State
    e1: Optional[State]
    r0: float


def aggregate_rates(p: ModelParams) -> AggregateRates:
    """Immune removal totals: ``x`` (infected cells) and ``y`` (virus)."""
    return AggregateRates(p.x, p.y)


def rhs_uncontrolled(s_now, s_delayed, p: ModelParams) -> np.ndarray:
    """Time derivative of ``(S, I, V)`` without drugs.

    ``s_delayed`` is the state at ``t - tau``.
    """
    S, I, V = s_now
    S_d, _, V_d = s_delayed
    return np.array([
        p.omega - p.beta * S * V - p.mu * S,
        p.beta * S_d * V_d - (p.x + p.mu) * I,
        p.b * I - (p.y + p.mu1) * V,
    ])


def rhs_controlled(s_now, s_tau, s_tau1, u_now, u_tau1, p: ModelParams) -> np.ndarray:
    """Time derivative of ``(S, I, V)`` under drug controls.

    First-line controls act with the drug-action lag ``tau1``: their
    clearance terms use ``u(t - tau1)`` together with ``I(t - tau1)`` and
    ``V(t - tau1)``.  Second-line controls act instantly.
    """
    S, I, V = s_now
    S_d, _, V_d = s_tau
    _, I_d1, V_d1 = s_tau1
    mu11, mu12, mu21, mu22 = u_now
    mu11_d, _, mu21_d, _ = u_tau1
    eps1 = p.epsilon1
    a = p.alpha
    return np.array([
        p.omega - p.beta * S * V - p.mu * S,
        p.beta * S_d * V_d - (p.x + p.mu) * I - eps1 * mu11_d * I_d1 - a * mu12 * I,
        p.b * I - eps1 * mu21_d * V_d1 - a * mu22 * V - (p.y + p.mu1) * V,
    ])


def _check_r0_denominators(p: ModelParams) -> None:
    if p.mu <= 0:
        raise ParameterError("mu", "must be > 0 for R0")
    if p.x + p.mu <= 0:
        raise ParameterError("b1", "x + mu must be > 0 for R0")
    if p.y + p.mu1 <= 0:
        raise ParameterError("mu1", "y + mu1 must be > 0 for R0")


def compute_r0(p: ModelParams) -> float:
    """Basic reproduction number ``beta b omega / (mu (x+mu) (y+mu1))``."""
    _check_r0_denominators(p)
    return p.beta * p.b * p.omega / (p.mu * (p.x + p.mu) * (p.y + p.mu1))


def r0_oracle_ngm(p: ModelParams) -> float:
    """R0 as the spectral radius of ``F V^-1`` on the (I, V) subsystem at E0.

    Kept independent of :func:`compute_r0`; it builds the matrices and
    takes eigenvalues numerically.
    """
    _check_r0_denominators(p)
    s0 = p.omega / p.mu
    # new infections enter I at rate beta*S0*V
    F = np.array([[0.0, p.beta * s0], [0.0, 0.0]])
    Vm = np.array([[p.x + p.mu, 0.0], [-p.b, p.y + p.mu1]])
    ngm = F @ np.linalg.inv(Vm)
    return float(np.max(np.abs(np.linalg.eigvals(ngm))))


def equilibria(p: ModelParams) -> EquilibriumSet:
    """Infection-free E0 and, when ``R0 > 1``, the infected equilibrium E1."""
    e0 = State(p.omega / p.mu, 0.0, 0.0)
    r0 = compute_r0(p)
    e1 = None
    if r0 > 1.0:
        e1 = State(
            p.omega / (r0 * p.mu),
            p.omega * (r0 - 1.0) / (r0 * (p.x + p.mu)),
            p.mu * (r0 - 1.0) / p.beta,
        )
    return EquilibriumSet(e0=e0, e1=e1, r0=r0)


_IMMUNE = dict(
    d1=0.027, d2=0.22, d3=0.1, d4=0.428, d5=0.01, d6=0.01,
    b1=0.1, b2=0.1, b3=0.08, b4=0.11, b5=0.1, b6=0.07,
)


def cleared_params(tau: float = 5.0) -> ModelParams:
    """Parameter set for which the infection-free state is stable."""
    return ModelParams(omega=10, beta=0.05, mu=0.5, mu1=0.1, b=0.49, tau=tau, **_IMMUNE)


def endemic_params(tau: float = 5.0) -> ModelParams:
    """Parameter set with an infected equilibrium."""
    return ModelParams(omega=5, beta=0.5, mu=0.5, mu1=0.1, b=0.49, tau=tau, **_IMMUNE)


def treatment_params() -> ModelParams:
    """Parameter set for the drug-control problems."""
    return ModelParams(omega=10, beta=0.05, mu=0.5, mu1=1.1, b=0.5,
                       tau=1.0, tau1=6.0, alpha=0.6, **_IMMUNE)
