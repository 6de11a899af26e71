"""Scenario files: strict JSON schema, validation and round-trip writing.

A scenario holds a name, a mode, model parameters, one block of
mode-specific settings and optional embedded assertions::

    {
      "name": "cleared_stability",
      "mode": "stability",
      "params": {"omega": 10, "beta": 0.05, ...},
      "stability": {"tau_list": [5, 15], "horizon": 100},
      "assertions": [{"metric": "report.delay_independent", "op": "==", "value": true}]
    }
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Tuple

from .model import ModelParams, ParameterError

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "SimulateBlock",
    "StabilityBlock",
    "OcpBlock",
    "TimeoptBlock",
    "Assertion",
    "MODES",
    "load_config",
    "parse_config",
    "config_to_dict",
    "dump_config",
    "load_params",
]

MODES = ("simulate", "stability", "ocp", "timeopt")
_NAME_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")
OPS = ("<", "<=", ">", ">=", "==", "approx")


class ConfigError(ValueError):
    """Invalid scenario file; ``field`` is a dotted path to the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


def _num(value, where: str, *, positive=False, nonneg=False, integer=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(where, "must be finite")
    if integer and int(value) != value:
        raise ConfigError(where, "must be an integer")
    if positive and not value > 0:
        raise ConfigError(where, f"must be > 0, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(where, f"must be >= 0, got {value!r}")
    return int(value) if integer else float(value)


def _vec(value, n: Optional[int], where: str, **kw) -> Tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(where, f"expected a list, got {value!r}")
    if n is not None and len(value) != n:
        raise ConfigError(where, f"expected {n} entries, got {len(value)}")
    return tuple(_num(v, f"{where}[{i}]", **kw) for i, v in enumerate(value))


def _str(value, where: str, choices=None) -> str:
    if not isinstance(value, str):
        raise ConfigError(where, f"expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigError(where, f"must be one of {list(choices)}, got {value!r}")
    return value


def _check_keys(data: dict, where: str, required, optional) -> None:
    if not isinstance(data, dict):
        raise ConfigError(where, f"expected an object, got {type(data).__name__}")
    allowed = set(required) | set(optional)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown field")
    for key in required:
        if key not in data:
            raise ConfigError(f"{where}.{key}" if where else key, "missing required field")


@dataclass(frozen=True)
class SimulateBlock:
    history: Tuple[float, ...]
    T: float
    h: float = 0.01
    scheme: str = "rk4"
    tau_list: Optional[Tuple[float, ...]] = None

    @classmethod
    def parse(cls, d: dict, w: str) -> "SimulateBlock":
        _check_keys(d, w, ("history", "T"), ("h", "scheme", "tau_list"))
        return cls(
            history=_vec(d["history"], 3, f"{w}.history", nonneg=True),
            T=_num(d["T"], f"{w}.T", positive=True),
            h=_num(d.get("h", 0.01), f"{w}.h", positive=True),
            scheme=_str(d.get("scheme", "rk4"), f"{w}.scheme", ("rk4", "euler")),
            tau_list=None if d.get("tau_list") is None
            else _vec(d["tau_list"], None, f"{w}.tau_list", nonneg=True),
        )


@dataclass(frozen=True)
class StabilityBlock:
    tau_list: Tuple[float, ...]
    horizon: float
    h: float = 0.01
    perturbation: float = 0.05
    start: Optional[Tuple[float, ...]] = None

    @classmethod
    def parse(cls, d: dict, w: str) -> "StabilityBlock":
        _check_keys(d, w, ("tau_list", "horizon"), ("h", "perturbation", "start"))
        return cls(
            tau_list=_vec(d["tau_list"], None, f"{w}.tau_list", nonneg=True),
            horizon=_num(d["horizon"], f"{w}.horizon", positive=True),
            h=_num(d.get("h", 0.01), f"{w}.h", positive=True),
            perturbation=_num(d.get("perturbation", 0.05), f"{w}.perturbation", nonneg=True),
            start=None if d.get("start") is None
            else _vec(d["start"], 3, f"{w}.start", nonneg=True),
        )


@dataclass(frozen=True)
class OcpBlock:
    history: Tuple[float, ...]
    arms: Tuple[Tuple[str, Tuple[float, ...]], ...]
    T: float = 40.0
    h: float = 0.01
    A1: float = 500.0
    A2: float = 200.0
    relaxation: float = 0.5
    tol: float = 1e-3
    max_iters: int = 200

    @classmethod
    def parse(cls, d: dict, w: str) -> "OcpBlock":
        _check_keys(d, w, ("history", "arms"),
                    ("T", "h", "A1", "A2", "relaxation", "tol", "max_iters"))
        arms = d["arms"]
        if not isinstance(arms, dict) or not arms:
            raise ConfigError(f"{w}.arms", "expected a nonempty object of name -> bounds")
        parsed = []
        for name, b in arms.items():
            if not _NAME_RE.match(name):
                raise ConfigError(f"{w}.arms.{name}", "arm name is not filesystem-safe")
            parsed.append((name, _vec(b, 4, f"{w}.arms.{name}", nonneg=True)))
        relax = _num(d.get("relaxation", 0.5), f"{w}.relaxation", positive=True)
        if relax > 1:
            raise ConfigError(f"{w}.relaxation", "must lie in (0, 1]")
        return cls(
            history=_vec(d["history"], 3, f"{w}.history", nonneg=True),
            arms=tuple(parsed),
            T=_num(d.get("T", 40.0), f"{w}.T", positive=True),
            h=_num(d.get("h", 0.01), f"{w}.h", positive=True),
            A1=_num(d.get("A1", 500.0), f"{w}.A1", positive=True),
            A2=_num(d.get("A2", 200.0), f"{w}.A2", positive=True),
            relaxation=relax,
            tol=_num(d.get("tol", 1e-3), f"{w}.tol", positive=True),
            max_iters=_num(d.get("max_iters", 200), f"{w}.max_iters", positive=True, integer=True),
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arms"] = {name: list(b) for name, b in self.arms}
        return out


@dataclass(frozen=True)
class TimeoptBlock:
    initial: Tuple[float, ...]
    bounds: Tuple[float, ...]
    lambda0_directions: Optional[int] = None
    lambda0: Optional[Tuple[Tuple[float, ...], ...]] = None
    target: Optional[Tuple[float, ...]] = None
    target_radius: Tuple[float, ...] = (0.2, 0.1, 0.1)
    t_max: float = 60.0
    h: float = 0.01
    h_tol: float = 0.1
    switching_pairing: str = "printed"
    workers: int = 1

    @classmethod
    def parse(cls, d: dict, w: str) -> "TimeoptBlock":
        _check_keys(d, w, ("initial", "bounds"),
                    ("lambda0_directions", "lambda0", "target", "target_radius", "t_max",
                     "h", "h_tol", "switching_pairing", "workers"))
        dirs = d.get("lambda0_directions")
        lams = d.get("lambda0")
        if (dirs is None) == (lams is None):
            raise ConfigError(f"{w}.lambda0", "give exactly one of lambda0 or lambda0_directions")
        if lams is not None:
            if not isinstance(lams, list) or not lams:
                raise ConfigError(f"{w}.lambda0", "expected a nonempty list of triples")
            lams = tuple(_vec(v, 3, f"{w}.lambda0[{i}]") for i, v in enumerate(lams))
        return cls(
            initial=_vec(d["initial"], 3, f"{w}.initial", nonneg=True),
            bounds=_vec(d["bounds"], 4, f"{w}.bounds", nonneg=True),
            lambda0_directions=None if dirs is None
            else _num(dirs, f"{w}.lambda0_directions", positive=True, integer=True),
            lambda0=lams,
            target=None if d.get("target") is None
            else _vec(d["target"], 3, f"{w}.target", nonneg=True),
            target_radius=_vec(d.get("target_radius", [0.2, 0.1, 0.1]), 3,
                               f"{w}.target_radius", positive=True),
            t_max=_num(d.get("t_max", 60.0), f"{w}.t_max", positive=True),
            h=_num(d.get("h", 0.01), f"{w}.h", positive=True),
            h_tol=_num(d.get("h_tol", 0.1), f"{w}.h_tol", positive=True),
            switching_pairing=_str(d.get("switching_pairing", "printed"),
                                   f"{w}.switching_pairing", ("printed", "advanced")),
            workers=_num(d.get("workers", 1), f"{w}.workers", positive=True, integer=True),
        )


@dataclass(frozen=True)
class Assertion:
    metric: str
    op: str
    value: Any = None
    ref: Optional[str] = None
    tol: Optional[float] = None

    @classmethod
    def parse(cls, d: dict, w: str) -> "Assertion":
        _check_keys(d, w, ("metric", "op"), ("value", "ref", "tol"))
        op = _str(d["op"], f"{w}.op", OPS)
        if ("value" in d) == ("ref" in d):
            raise ConfigError(w, "give exactly one of value or ref")
        value = d.get("value")
        if value is not None and not isinstance(value, (bool, int, float, str)):
            raise ConfigError(f"{w}.value", "must be a scalar")
        tol = d.get("tol")
        if op == "approx" and tol is None:
            raise ConfigError(f"{w}.tol", "required for approx")
        return cls(
            metric=_str(d["metric"], f"{w}.metric"),
            op=op,
            value=value,
            ref=None if d.get("ref") is None else _str(d["ref"], f"{w}.ref"),
            tol=None if tol is None else _num(tol, f"{w}.tol", nonneg=True),
        )

    def to_dict(self) -> dict:
        out = {"metric": self.metric, "op": self.op}
        if self.ref is not None:
            out["ref"] = self.ref
        else:
            out["value"] = self.value
        if self.tol is not None:
            out["tol"] = self.tol
        return out


_BLOCKS = {"simulate": SimulateBlock, "stability": StabilityBlock,
           "ocp": OcpBlock, "timeopt": TimeoptBlock}


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    mode: str
    params: ModelParams
    block: Any
    output_dir: Optional[str] = None
    description: str = ""
    assertions: Tuple[Assertion, ...] = field(default_factory=tuple)


def parse_config(data: dict) -> ScenarioConfig:
    _check_keys(data, "", ("name", "mode", "params"),
                ("output_dir", "description", "assertions") + MODES)
    name = _str(data["name"], "name")
    if not _NAME_RE.match(name):
        raise ConfigError("name", f"not a filesystem-safe identifier: {name!r}")
    mode = _str(data["mode"], "mode", MODES)
    for other in MODES:
        if other != mode and other in data:
            raise ConfigError(other, f"block does not match mode {mode!r}")
    if mode not in data:
        raise ConfigError(mode, "missing block for the declared mode")
    params = data["params"]
    if not isinstance(params, dict):
        raise ConfigError("params", "expected an object")
    try:
        for k, v in params.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ParameterError(k, f"expected a number, got {v!r}")
        p = ModelParams.from_dict(params)
    except ParameterError as exc:
        raise ConfigError(f"params.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    block = _BLOCKS[mode].parse(data[mode], mode)
    asserts = data.get("assertions", [])
    if not isinstance(asserts, list):
        raise ConfigError("assertions", "expected a list")
    out_dir = data.get("output_dir")
    if out_dir is not None:
        out_dir = _str(out_dir, "output_dir")
    return ScenarioConfig(
        name=name, mode=mode, params=p, block=block, output_dir=out_dir,
        description=_str(data.get("description", ""), "description"),
        assertions=tuple(Assertion.parse(a, f"assertions[{i}]") for i, a in enumerate(asserts)),
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(data)


def _plain(obj):
    if isinstance(obj, tuple):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def config_to_dict(cfg: ScenarioConfig) -> dict:
    block = cfg.block.to_dict() if hasattr(cfg.block, "to_dict") else asdict(cfg.block)
    block = {k: v for k, v in _plain(block).items() if v is not None}
    out = {"name": cfg.name, "mode": cfg.mode, "params": cfg.params.to_dict(), cfg.mode: block}
    if cfg.output_dir is not None:
        out["output_dir"] = cfg.output_dir
    if cfg.description:
        out["description"] = cfg.description
    if cfg.assertions:
        out["assertions"] = [a.to_dict() for a in cfg.assertions]
    return out


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def load_params(path) -> ModelParams:
    """Parameters from either a bare parameter object or a scenario file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if isinstance(data, dict) and "params" in data and "mode" in data:
        return parse_config(data).params
    if not isinstance(data, dict):
        raise ConfigError("params", "expected an object")
    try:
        return ModelParams.from_dict(data)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"params.{getattr(exc, 'field', '')}", str(exc)) from None
