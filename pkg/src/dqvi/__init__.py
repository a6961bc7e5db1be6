"""Numerical solver for coupled history-dependent quasi-variational problems.

The unknowns are a velocity governed by an elliptic quasi-variational
inequality with a memory term, a wear variable driven by an ODE and a damage
field governed by a parabolic variational inequality. Time stepping is
implicit Euler with a trapezoidal history quadrature; the coupling is resolved
by nested fixed-point loops whose contraction is monitored.
"""

from .builtin import BUILTINS, ScalarParams, builtin_problem, exact_linear_solution
from .core import (Constants, DqviProblem, HypothesisReport, JSpec, contraction_constants,
                   linear_j, validate_hypotheses, zero_j)
from .errors import (BufferOverflow, DqviError, InfeasibleProblem, OracleInvalid,
                     RejectedInput, StepFailure)
from .history import HistoryBuffer, TimeGrid
from .spaces import BoxSet, ConvexSet, DiscreteSpace, HalfSpaceSet
from .stepper import StepperConfig, Trajectory, run, step
from .vi_solver import SolveReport, ViInstance, solve_quasi_vi, solve_vi

__all__ = [
    "BUILTINS", "ScalarParams", "builtin_problem", "exact_linear_solution", "Constants",
    "DqviProblem", "HypothesisReport", "JSpec", "contraction_constants", "linear_j",
    "validate_hypotheses", "zero_j", "BufferOverflow", "DqviError", "InfeasibleProblem",
    "OracleInvalid", "RejectedInput", "StepFailure", "HistoryBuffer", "TimeGrid", "BoxSet",
    "ConvexSet", "DiscreteSpace", "HalfSpaceSet", "StepperConfig", "Trajectory", "run", "step",
    "SolveReport", "ViInstance", "solve_quasi_vi", "solve_vi",
]
