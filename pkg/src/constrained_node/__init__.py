"""Neural ODE training under equality and inequality constraints on the
predicted trajectory, via an admissibility stage followed by an optimization
stage with preference-point acceptance.
"""

from . import autodiff
from .datasets import ExperimentSpec, TimeSeries, generate, get_spec, read_csv, write_csv
from .errors import (
    AlignmentError,
    ConfigError,
    ConstrainedNodeError,
    ContractError,
    DivergenceError,
    NonConvergenceError,
    ParseError,
    ShapeError,
    SpecMismatchError,
    StiffnessError,
)
from .losses import (
    ConstraintSet,
    LossForm,
    admissibility_loss,
    is_feasible,
    optimization_loss,
    penalty_loss,
    violation_metric,
)
from .model import DynamicsNet, LayerSpec, build_cr_net, build_wpg_net, load_params, save_params
from .solvers import IvpProblem, Trajectory, solve_dopri5, solve_euler, solve_rk4
from .trainer import AdamState, Strategy, TrainConfig, TrainData, TrainTrace, adam_step, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AlignmentError",
    "ConfigError",
    "ConstrainedNodeError",
    "ConstraintSet",
    "ContractError",
    "DivergenceError",
    "DynamicsNet",
    "ExperimentSpec",
    "IvpProblem",
    "LayerSpec",
    "LossForm",
    "NonConvergenceError",
    "ParseError",
    "ShapeError",
    "SpecMismatchError",
    "StiffnessError",
    "Strategy",
    "TimeSeries",
    "TrainConfig",
    "TrainData",
    "TrainTrace",
    "Trajectory",
    "adam_step",
    "admissibility_loss",
    "autodiff",
    "build_cr_net",
    "build_wpg_net",
    "generate",
    "get_spec",
    "is_feasible",
    "load_params",
    "optimization_loss",
    "penalty_loss",
    "read_csv",
    "save_params",
    "solve_dopri5",
    "solve_euler",
    "solve_rk4",
    "train",
    "violation_metric",
    "write_csv",
]
