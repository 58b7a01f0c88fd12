"""
twopoint - two-point gradient regularization for ill-posed operator equations.
"""

from .geometry import SpaceModel, dual_norm, duality_map, norm, pairing
from .penalty import Penalty, power_norm, quadratic_l1
from .operators import DiagonalExp, ForwardProblem, LinearDeconv, make_deconv, make_diagexp
from .solver import IterationTrace, SolverConfig, iterate, theta5
from .diagnostics import TheoryReport, audit, delta_sweep_report

__version__ = "1.0.0"

__all__ = [
    "SpaceModel",
    "norm",
    "dual_norm",
    "duality_map",
    "pairing",
    "Penalty",
    "power_norm",
    "quadratic_l1",
    "ForwardProblem",
    "LinearDeconv",
    "DiagonalExp",
    "make_deconv",
    "make_diagexp",
    "SolverConfig",
    "IterationTrace",
    "iterate",
    "theta5",
    "TheoryReport",
    "audit",
    "delta_sweep_report",
]
