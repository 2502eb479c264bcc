"""Finite-difference pricing of European and American puts under Heston."""

from .lattice import GridConfig, Lattice, LatticeError, build_lattice, problem_lattice
from .operator import DiscreteOperator, assemble_operator
from .penalty import PenaltyFamily, apply_penalty
from .solver import PriceSurface, SolverConfig, SolverError, solve_american, solve_european

__all__ = [
    "DiscreteOperator",
    "GridConfig",
    "Lattice",
    "LatticeError",
    "PenaltyFamily",
    "PriceSurface",
    "SolverConfig",
    "SolverError",
    "apply_penalty",
    "assemble_operator",
    "build_lattice",
    "problem_lattice",
    "solve_american",
    "solve_european",
]
