"""Delay model of within-host viral infection with drug-scheduling solvers."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"

from .model import (ModelParams, ParameterError, State, compute_r0, equilibria,  # noqa: E402
                    r0_oracle_ngm, cleared_params, endemic_params, treatment_params)
from .dde import ControlSchedule, Grid, Trajectory, simulate  # noqa: E402


def scenarios_dir() -> Path:
    """Directory holding the bundled scenario files."""
    return Path(str(resources.files(__name__) / "scenarios"))


__all__ = [
    "ModelParams", "ParameterError", "State", "compute_r0", "equilibria", "r0_oracle_ngm",
    "cleared_params", "endemic_params", "treatment_params",
    "ControlSchedule", "Grid", "Trajectory", "simulate", "scenarios_dir",
]
