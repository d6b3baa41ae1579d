"""Mean-field selective optimal control with exponential integrators (1D)."""

from .grid import Grid1D, build_grid
from .matfun import phi1_combined, phi1_combined_dense, phi1_combined_krylov
from .model import Discretization, ModelSpec, TrajectoryField, discretize
from .models import PresetName, make_preset
from .optimizer import DescentConfig, OptimizationResult, evaluate_cost, optimize
from .steppers import TimeGrid

__all__ = [
    "DescentConfig",
    "Discretization",
    "Grid1D",
    "ModelSpec",
    "OptimizationResult",
    "PresetName",
    "TimeGrid",
    "TrajectoryField",
    "build_grid",
    "discretize",
    "evaluate_cost",
    "make_preset",
    "optimize",
    "phi1_combined",
    "phi1_combined_dense",
    "phi1_combined_krylov",
]

__version__ = "0.1.0"
