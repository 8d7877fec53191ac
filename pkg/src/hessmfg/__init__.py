"""Hessian-dependent energies, their minimizers and the mean-field-game pairs they induce."""

__version__ = "0.1.0"

from .energy import EnergySpec, energy, energy_gradient
from .envelope import build_minimizing_sequence, convex_envelope_1d, relaxed_energy_spec
from .explicit1d import ExplicitParams, explicit_energy, explicit_m, explicit_u
from .grid import BoundaryFunction, Grid, GridFunction, HessianField, hessian, integrate
from .mfg import MFGPair, assemble_density, fp_residual, hj_residual, verify_weak_solution
from .minimize import SolveOptions, SolveResult, solve, verify_first_order
from .operators import OperatorSpec, SymMatrix, available_operators, get_operator
from .probe import holder_seminorm_gradient, lp_norm, refinement_study

__all__ = [
    "BoundaryFunction",
    "EnergySpec",
    "ExplicitParams",
    "Grid",
    "GridFunction",
    "HessianField",
    "MFGPair",
    "OperatorSpec",
    "SolveOptions",
    "SolveResult",
    "SymMatrix",
    "assemble_density",
    "available_operators",
    "build_minimizing_sequence",
    "convex_envelope_1d",
    "energy",
    "energy_gradient",
    "explicit_energy",
    "explicit_m",
    "explicit_u",
    "fp_residual",
    "get_operator",
    "hessian",
    "hj_residual",
    "holder_seminorm_gradient",
    "integrate",
    "lp_norm",
    "refinement_study",
    "relaxed_energy_spec",
    "solve",
    "verify_first_order",
    "verify_weak_solution",
]
