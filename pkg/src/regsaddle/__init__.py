"""Sparsified preconditioners for regularized saddle-point systems, and an
interior point LP/QP solver built on them."""

from .ippmm import SolverOptions, solve
from .model import IterateState, ProblemQP
from .mps import read_mps, read_problem, standardize
from .precond import (
    build_pas,
    build_pk,
    build_pne_chol,
    build_pne_ldl,
    make_plan,
    sparsify_hessian,
)
from .sparse import Permutation, SparseMatrix

__all__ = [
    "IterateState",
    "Permutation",
    "ProblemQP",
    "SolverOptions",
    "SparseMatrix",
    "build_pas",
    "build_pk",
    "build_pne_chol",
    "build_pne_ldl",
    "make_plan",
    "read_mps",
    "read_problem",
    "solve",
    "sparsify_hessian",
    "standardize",
]
__version__ = "0.1.0"
