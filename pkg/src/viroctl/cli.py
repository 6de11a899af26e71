"""Command-line driver: run scenario files and write CSV/JSON artifacts.

    viroctl run scenarios/cleared_simulate.json --out out/
    viroctl suite scenarios/ --out out/
    viroctl r0 --params params.json

Exit codes: 0 success (including reported solver non-convergence),
2 configuration error, 3 engine error, 4 assertion failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, scenarios_dir
from .config import ConfigError, ScenarioConfig, load_config, load_params
from .dde import ConfigurationError, DivergenceError, Grid, simulate
from .export import write_csv, write_json
from .model import ParameterError, compute_r0, equilibria
from .ocp import CSV_COLUMNS as OCP_COLUMNS, OcpConfig, fbsm_solve
from .stability import PreconditionError, e0_report, e1_delay_independent, stability_cross_check
from .timeopt import (CSV_COLUMNS as TO_COLUMNS, TimeOptConfig, lambda0_grid_from_directions,
                      shoot_search, sphere_directions, terminal_condition_check)

__all__ = ["RunSummary", "EngineError", "run_scenario", "run_suite", "evaluate_assertions",
           "resolve_output_dir", "main"]

log = logging.getLogger("viroctl")

EXIT_OK, EXIT_CONFIG, EXIT_ENGINE, EXIT_ASSERT = 0, 2, 3, 4
DEFAULT_OUT = "viroctl_out"


class EngineError(RuntimeError):
    def __init__(self, scenario: str, phase: str, cause: BaseException):
        super().__init__(f"scenario {scenario!r}: {phase} failed: {cause}")
        self.scenario = scenario
        self.phase = phase
        self.cause = cause


@dataclass
class RunSummary:
    name: str
    mode: str
    scalars: dict
    artifacts: List[str]
    duration: float
    diagnostics: dict = field(default_factory=dict)
    assertions: List[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions)


def resolve_output_dir(cfg: ScenarioConfig, out: Optional[str] = None) -> Path:
    """``--out`` first, then the file's ``output_dir``, then ``$VIROCTL_OUT``."""
    base = out or cfg.output_dir or os.environ.get("VIROCTL_OUT") or DEFAULT_OUT
    return Path(base)


def _with_step(cfg: ScenarioConfig, h: Optional[float]) -> ScenarioConfig:
    if h is None:
        return cfg
    if not h > 0:
        raise ConfigError("h", "step override must be positive")
    return dataclasses.replace(cfg, block=dataclasses.replace(cfg.block, h=float(h)))


def _lookup(summary: dict, path: str):
    cur = summary
    for part in path.split("."):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, list) and part.lstrip("-").isdigit() and -len(cur) <= int(part) < len(cur):
            cur = cur[int(part)]
        else:
            raise KeyError(path)
    return cur


def evaluate_assertions(cfg: ScenarioConfig, summary: dict) -> List[dict]:
    results = []
    for a in cfg.assertions:
        row = {"metric": a.metric, "op": a.op}
        try:
            actual = _lookup(summary, a.metric)
            expected = _lookup(summary, a.ref) if a.ref is not None else a.value
            row.update(actual=actual, expected=expected)
            if a.op == "approx":
                ok = abs(float(actual) - float(expected)) <= a.tol
            elif a.op == "==":
                ok = actual == expected
            else:
                x, y = float(actual), float(expected)
                ok = {"<": x < y, "<=": x <= y, ">": x > y, ">=": x >= y}[a.op]
            row["passed"] = bool(ok)
        except (KeyError, TypeError, ValueError) as exc:
            row.update(passed=False, error=f"cannot evaluate: {exc}")
        results.append(row)
    return results


def _run_simulate(cfg: ScenarioConfig, out: Path) -> tuple:
    b = cfg.block
    p = cfg.params
    eq = equilibria(p)
    taus = list(b.tau_list) if b.tau_list is not None else [p.tau]
    runs, files, windows = [], [], []
    for tau in taus:
        pt = p.with_(tau=float(tau))
        traj = simulate(pt, b.history, Grid.for_params(pt, b.T, b.h), scheme=b.scheme)
        fname = f"{cfg.name}_tau{tau:g}.csv"
        write_csv(out / fname, ("t", "S", "I", "V"),
                  np.column_stack([traj.times, traj.states]))
        files.append(fname)
        windows.append(traj.window)
        run = {"tau": float(tau), "final": traj.final.tolist(), "rows": int(len(traj.states)),
               "distance_to_e0": float(np.max(np.abs(traj.final - np.array(eq.e0)))),
               "clamp_events": traj.clamp_events}
        if eq.e1 is not None:
            e1 = np.array(eq.e1)
            run["rel_distance_to_e1"] = float(np.max(np.abs(traj.final - e1)
                                                     / np.maximum(np.abs(e1), 1.0)))
        runs.append(run)
    summary = {"r0": eq.r0, "e0": list(eq.e0),
               "e1": None if eq.e1 is None else list(eq.e1), "runs": runs,
               "max_distance_to_e0": max(r["distance_to_e0"] for r in runs)}
    if len(taus) > 1:
        summary["v_ordering_fraction"] = v_ordering_fraction(taus, windows, b.h)
    return summary, files


def v_ordering_fraction(taus, windows, h: float) -> float:
    """Share of nodes after ``max(tau)`` where V strictly decreases with the delay."""
    order = np.argsort(taus)
    start = int(round(max(taus) / h)) + 1
    V = np.array([windows[i][start:, 2] for i in order])
    if V.shape[1] == 0:
        return 1.0
    ok = np.all(np.diff(V, axis=0) < 0, axis=0)
    return float(np.mean(ok))


def _run_stability(cfg: ScenarioConfig, out: Path) -> tuple:
    b = cfg.block
    p = cfg.params
    e0 = e0_report(p)
    r0 = compute_r0(p)
    main = e1_delay_independent(p) if r0 > 1 else e0
    cross = stability_cross_check(p, b.tau_list, b.horizon, h=b.h,
                                  perturbation=b.perturbation, start=b.start)
    summary = {"r0": r0, "report": main.to_dict(), "e0": e0.to_dict(),
               "cross_check": cross.to_dict()}
    fname = f"{cfg.name}_stability.json"
    write_json(out / fname, summary)
    return summary, [fname]


def _solve_arm(args):
    ocfg, history = args
    return fbsm_solve(ocfg, history)


def _run_ocp(cfg: ScenarioConfig, out: Path, workers: int) -> tuple:
    b = cfg.block
    jobs = [(OcpConfig(cfg.params, A1=b.A1, A2=b.A2, bounds=bounds, T=b.T, h=b.h,
                       relaxation=b.relaxation, tol=b.tol, max_iters=b.max_iters), b.history)
            for _, bounds in b.arms]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            sols = list(pool.map(_solve_arm, jobs))
    else:
        sols = [_solve_arm(j) for j in jobs]
    arms, files = {}, []
    for (name, _), sol in zip(b.arms, sols):
        write_csv(out / f"{cfg.name}_{name}.csv", OCP_COLUMNS, sol.table())
        write_json(out / f"{cfg.name}_{name}.json", sol.summary())
        files += [f"{cfg.name}_{name}.csv", f"{cfg.name}_{name}.json"]
        arms[name] = {"cost": sol.cost, "I_T": float(sol.state.final[1]),
                      "V_T": float(sol.state.final[2]), "converged": sol.converged,
                      "iterations": sol.iterations}
    summary = {"arms": arms,
               "cost_order": sorted(arms, key=lambda k: arms[k]["cost"]),
               "I_T_order": sorted(arms, key=lambda k: arms[k]["I_T"]),
               "V_T_order": sorted(arms, key=lambda k: arms[k]["V_T"]),
               "all_converged": all(a["converged"] for a in arms.values())}
    write_json(out / f"{cfg.name}_comparison.json", summary)
    files.append(f"{cfg.name}_comparison.json")
    return summary, files


def timeopt_config(cfg: ScenarioConfig) -> TimeOptConfig:
    b = cfg.block
    base = TimeOptConfig(cfg.params, bounds=b.bounds, initial=b.initial, target=b.target,
                         target_radius=b.target_radius, t_max=b.t_max, h=b.h, h_tol=b.h_tol,
                         switching_pairing=b.switching_pairing)
    if b.lambda0 is not None:
        grid = b.lambda0
    else:
        grid = lambda0_grid_from_directions(base, sphere_directions(b.lambda0_directions))
    return dataclasses.replace(base, lambda0_grid=grid)


def _run_timeopt(cfg: ScenarioConfig, out: Path, workers: int) -> tuple:
    tcfg = timeopt_config(cfg)
    if not tcfg.lambda0_grid:
        raise ConfigError("timeopt.lambda0_directions", "no direction admits H(0) = 0")
    result = shoot_search(tcfg, workers=max(workers, cfg.block.workers))
    summary = result.summary()
    files = []
    if result.solution is not None:
        term = terminal_condition_check(result.solution, cfg.params, tcfg.h_tol)
        summary["terminal"] = dataclasses.asdict(term)
        write_csv(out / f"{cfg.name}.csv", TO_COLUMNS, result.solution.table())
        files.append(f"{cfg.name}.csv")
    write_json(out / f"{cfg.name}_candidates.json", result.candidates)
    files.append(f"{cfg.name}_candidates.json")
    return summary, files


def run_scenario(cfg: ScenarioConfig, out: Optional[str] = None, h: Optional[float] = None,
                 workers: int = 1) -> RunSummary:
    """Run one scenario and write its artifacts under ``<out>/<name>/``."""
    cfg = _with_step(cfg, h)
    out_dir = resolve_output_dir(cfg, out) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        if cfg.mode == "simulate":
            summary, files = _run_simulate(cfg, out_dir)
        elif cfg.mode == "stability":
            summary, files = _run_stability(cfg, out_dir)
        elif cfg.mode == "ocp":
            summary, files = _run_ocp(cfg, out_dir, workers)
        else:
            summary, files = _run_timeopt(cfg, out_dir, workers)
    except (ConfigurationError, ParameterError) as exc:
        raise ConfigError(cfg.mode, str(exc)) from exc
    except (DivergenceError, PreconditionError, ArithmeticError) as exc:
        raise EngineError(cfg.name, cfg.mode, exc) from exc
    duration = time.perf_counter() - start
    checks = evaluate_assertions(cfg, summary)
    write_json(out_dir / f"{cfg.name}_summary.json",
               {"name": cfg.name, "mode": cfg.mode, "summary": summary,
                "assertions": checks, "artifacts": files})
    files.append(f"{cfg.name}_summary.json")
    return RunSummary(name=cfg.name, mode=cfg.mode, scalars=summary,
                      artifacts=[str(out_dir / f) for f in files], duration=duration,
                      assertions=checks)


def _suite_task(args) -> dict:
    path, out, h = args
    row = {"file": Path(path).name, "name": None, "status": "error", "assertions": []}
    try:
        cfg = load_config(path)
        row["name"] = cfg.name
        res = run_scenario(cfg, out=out, h=h)
        row["assertions"] = res.assertions
        row["status"] = "pass" if res.passed else "fail"
    except ConfigError as exc:
        row["error"] = f"config error: {exc}"
    except EngineError as exc:
        row["error"] = f"engine error: {exc}"
    except Exception as exc:  # isolation: one scenario never takes down the suite
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_suite(directory, out: Optional[str] = None, h: Optional[float] = None,
              workers: Optional[int] = None) -> dict:
    """Run every ``*.json`` scenario in ``directory``; write ``suite_report.json``."""
    directory = Path(directory)
    files = sorted(directory.glob("*.json"))
    base = Path(out or os.environ.get("VIROCTL_OUT") or DEFAULT_OUT)
    jobs = [(str(f), str(base), h) for f in files]
    workers = workers or min(4, os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            rows = list(pool.map(_suite_task, jobs))
    else:
        rows = [_suite_task(j) for j in jobs]
    report = {"scenarios": rows,
              "passed": sum(r["status"] == "pass" for r in rows),
              "failed": sum(r["status"] == "fail" for r in rows),
              "errors": sum(r["status"] == "error" for r in rows)}
    report["ok"] = report["failed"] == 0 and report["errors"] == 0
    base.mkdir(parents=True, exist_ok=True)
    write_json(base / "suite_report.json", report)
    return report


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="viroctl", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"viroctl {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help="output directory (default: $VIROCTL_OUT or ./viroctl_out)")
        sp.add_argument("--h", type=float, help="override the integration step")
        sp.add_argument("--seed", type=int, help="accepted for compatibility; all algorithms are deterministic")
        sp.add_argument("--workers", type=int, default=None, help="parallel worker processes")

    run = sub.add_parser("run", help="run one scenario file")
    run.add_argument("config")
    common(run)
    suite = sub.add_parser("suite", help="run every scenario in a directory")
    suite.add_argument("directory", nargs="?", default=None,
                       help="scenario directory (default: the bundled scenarios)")
    common(suite)
    r0 = sub.add_parser("r0", help="print the basic reproduction number")
    r0.add_argument("--params", required=True, help="parameter or scenario JSON file")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "r0":
            p = load_params(args.params)
            eq = equilibria(p)
            print(json.dumps({"r0": eq.r0, "e0": list(eq.e0),
                              "e1": None if eq.e1 is None else list(eq.e1)}))
            return EXIT_OK
        if args.command == "run":
            res = run_scenario(load_config(args.config), out=args.out, h=args.h,
                               workers=args.workers or 1)
            for a in res.assertions:
                print(f"{'PASS' if a['passed'] else 'FAIL'} {res.name}: {a['metric']} {a['op']} "
                      f"{a.get('expected')} (actual {a.get('actual')})")
            print(f"{res.name}: wrote {len(res.artifacts)} files in {res.duration:.2f}s")
            return EXIT_OK if res.passed else EXIT_ASSERT
        directory = args.directory or scenarios_dir()
        report = run_suite(directory, out=args.out, h=args.h, workers=args.workers)
        for row in report["scenarios"]:
            print(f"{row['status'].upper():5s} {row['file']}" +
                  (f"  ({row['error']})" if row.get("error") else ""))
        print(f"{report['passed']} passed, {report['failed']} failed, {report['errors']} errors")
        return EXIT_OK if report["ok"] else EXIT_ASSERT
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
