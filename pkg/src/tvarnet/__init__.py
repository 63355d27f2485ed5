"""Sparse time-varying VAR estimation with local breakpoints.

Group-lasso plus group total-variation regularized least squares, solved
with ADMM, for learning time-varying causality graphs from multivariate
time series.
"""
from .model import BreakpointSet, MultivariateSeries, TvarCoefficients
from .optimizer import AdmmConfig, admm_solve, build_design
from .simulator import GeneratorConfig, generate
from .windowing import collapse_problem, uniform_partition

__all__ = [
    "AdmmConfig",
    "BreakpointSet",
    "GeneratorConfig",
    "MultivariateSeries",
    "TvarCoefficients",
    "admm_solve",
    "build_design",
    "collapse_problem",
    "generate",
    "uniform_partition",
]

__version__ = "0.1.0"
