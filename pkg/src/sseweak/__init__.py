"""Weak simulation of finite-dimensional stochastic Schrödinger equations."""

__version__ = "0.1.0"

from .config import Scheme, SchemeConfig
from .errors import (
    DegenerateStepError,
    NumericalError,
    ReferenceSolverError,
    SingularMatrixError,
    StepError,
)
from .master import ReferenceSolution, solve_reference
from .montecarlo import EnsembleStats, batch_means_ci, epsilon_J, estimate_observable
from .oscillator import FockTruncation, example1_problem
from .rng import NoiseLaw
from .sse import SSEProblem


__all__ = [
    "DegenerateStepError",
    "EnsembleStats",
    "FockTruncation",
    "NoiseLaw",
    "NumericalError",
    "ReferenceSolution",
    "ReferenceSolverError",
    "SSEProblem",
    "Scheme",
    "SchemeConfig",
    "SingularMatrixError",
    "StepError",
    "batch_means_ci",
    "epsilon_J",
    "estimate_observable",
    "example1_problem",
    "solve_reference",
]
