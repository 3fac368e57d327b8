"""Haar wavelet collocation solvers for cardiac reaction-diffusion models."""
from .haar_core import HaarBasis, build_matrices, haar_eval, haar_integral
from .field_approx import JumpRegion, ParameterField, approximate, coefficient_decay
from .ionic_models import FhnModel, HhModel, MsModel, PassiveModel, Stimulus
from .krylov import LinearSystem, SolverConfig, solve
from .collocation_solver import HaarSolver, ProblemSpec, run
from .reference_oracle import FdGrid, compare, fd_run

__all__ = [
    "HaarBasis", "build_matrices", "haar_eval", "haar_integral",
    "JumpRegion", "ParameterField", "approximate", "coefficient_decay",
    "FhnModel", "HhModel", "MsModel", "PassiveModel", "Stimulus",
    "LinearSystem", "SolverConfig", "solve",
    "HaarSolver", "ProblemSpec", "run",
    "FdGrid", "compare", "fd_run",
]
__version__ = "0.1.0"
