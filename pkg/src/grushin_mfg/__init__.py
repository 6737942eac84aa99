"""Finite-difference mean field games and master equation on the Grushin torus."""

from .ccmetric import all_pairs, cc_sweep, d1_distance, d1_value
from .config import ConfigError, RunConfig
from .coupling import Coupling, make_coupling, zero_coupling
from .grid import ScalarField, SpaceTimeField, TorusGrid, as_density
from .hjb import BackwardLinearProblem, solve_backward_linear, solve_hjb
from .kfp import KFPProblem, solve_kfp
from .linearized import KernelK, LinearizedProblem, build_kernel_K, solve_linearized
from .master import MasterPoint, eval_U, master_residual, measure_derivative_fd
from .mfg import MFGSolution, default_m0, solve_mfg

__version__ = "0.1.0"

__all__ = [
    "BackwardLinearProblem", "ConfigError", "Coupling", "KFPProblem", "KernelK",
    "LinearizedProblem", "MFGSolution", "MasterPoint", "RunConfig", "ScalarField",
    "SpaceTimeField", "TorusGrid", "all_pairs", "as_density", "build_kernel_K", "cc_sweep",
    "d1_distance", "d1_value", "default_m0", "eval_U", "make_coupling", "master_residual",
    "measure_derivative_fd", "solve_backward_linear", "solve_hjb", "solve_kfp",
    "solve_linearized", "solve_mfg", "zero_coupling",
]
