"""MPC power dispatch for a shipboard DC bus with a generator and a battery."""

from .config import dump_config, load_config, parse_config
from .errors import (ConfigError, InfeasibleDispatchError, PlantCollapseError, QpError,
                     QpNotConvexError, QpUnboundedError, ShipMpcError)
from .mpc import DispatchInit, LoadForecast, MpcConfig, build_qp, solve_dispatch
from .plant import PlantParams, PlantState, step_rk4, steady_state
from .qp import QpOptions, QpProblem, QpSolution, QpStatus, solve_qp
from .sim import ScenarioConfig, lambda_sweep, metrics, run_open_loop, run_receding

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "InfeasibleDispatchError", "PlantCollapseError", "QpError",
    "QpNotConvexError", "QpUnboundedError", "ShipMpcError",
    "QpProblem", "QpOptions", "QpSolution", "QpStatus", "solve_qp",
    "MpcConfig", "LoadForecast", "DispatchInit", "build_qp", "solve_dispatch",
    "PlantParams", "PlantState", "step_rk4", "steady_state",
    "ScenarioConfig", "run_open_loop", "run_receding", "metrics", "lambda_sweep",
    "parse_config", "load_config", "dump_config",
]
