"""Neural solvers for variational problems with Dirichlet constraints."""

from .errors import (ConfigError, DegenerateNetwork, NumericFailure, OracleConvergenceError,
                     UndefinedRelativeError, VarsolveError)
from .network import ResNet, ResNetConfig, param_count
from .problems import BUILTIN_NAMES, Family, ProblemSpec, builtin
from .training import TrainConfig, TrainResult, run_aldl, run_pmdl, run_sgda, train

__version__ = "0.1.0"

__all__ = [
    "BUILTIN_NAMES", "ConfigError", "DegenerateNetwork", "Family", "NumericFailure",
    "OracleConvergenceError", "ProblemSpec", "ResNet", "ResNetConfig", "TrainConfig",
    "TrainResult", "UndefinedRelativeError", "VarsolveError", "builtin", "param_count",
    "run_aldl", "run_pmdl", "run_sgda", "train",
]
