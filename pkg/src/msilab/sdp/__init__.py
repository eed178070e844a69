from .expr import AffineExpr, bmat, block_diag, hstack, vstack
from .problem import LmiProblem, SolveOutcome, Constraint, Variable
from .solve import SolveOptions, solve, verify, POST_TOL, INFEAS_TOL
from .backends import BACKENDS, get_backend

__all__ = [
    "AffineExpr", "bmat", "block_diag", "hstack", "vstack",
    "LmiProblem", "SolveOutcome", "Constraint", "Variable",
    "SolveOptions", "solve", "verify", "POST_TOL", "INFEAS_TOL",
    "BACKENDS", "get_backend",
]
