"""Finite-horizon impulse control with a decision lag: HJB solver, policy
extraction, Monte Carlo checks and convergence diagnostics."""

from .model import ProblemSpec, validate_hypotheses
from .grid import Grid, ValueField, build_grid, interpolate, load_field, save_field
from .hjb import residuals, solve

__all__ = [
    "Grid", "ProblemSpec", "ValueField", "build_grid", "interpolate", "load_field",
    "residuals", "save_field", "solve", "validate_hypotheses",
]
__version__ = "0.1.0"
