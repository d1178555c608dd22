"""Index reduction of linear differential-algebraic equations by deflation.

A DAE ``E x' = A x + f(t)`` is replaced step by step by a smaller DAE plus an
explicit algebraic constraint, until the leading matrix is invertible or zero.
"""

from .deflate_lti import DeflationChain, ForcingCombo, run_deflation, verify_chain_invariants
from .deflate_ltv import LtvChain, check_geometric_regularity, run_ltv_deflation
from .errors import (
    DaeflateError,
    EvaluationError,
    ExprSyntaxError,
    JetOrderError,
    NotRegular,
    PivotBreakdown,
    ProblemError,
    RankDrop,
)
from .expr import ExprVector, differentiate, evaluate, parse
from .jets import MatrixJet, SmoothMatrix
from .linalg import find_regular_lambda, kronecker_index_oracle, rank_factorize, split_pencil
from .problem import build_chain, load_chain, load_problem, write_chain
from .solve import back_substitute, integrate_terminal, residual_check, solve_chain

__version__ = "0.1.0"

__all__ = [
    "DaeflateError",
    "DeflationChain",
    "EvaluationError",
    "ExprSyntaxError",
    "ExprVector",
    "ForcingCombo",
    "JetOrderError",
    "LtvChain",
    "MatrixJet",
    "NotRegular",
    "PivotBreakdown",
    "ProblemError",
    "RankDrop",
    "SmoothMatrix",
    "back_substitute",
    "build_chain",
    "check_geometric_regularity",
    "differentiate",
    "evaluate",
    "find_regular_lambda",
    "integrate_terminal",
    "kronecker_index_oracle",
    "load_chain",
    "load_problem",
    "parse",
    "rank_factorize",
    "residual_check",
    "run_deflation",
    "run_ltv_deflation",
    "solve_chain",
    "split_pencil",
    "verify_chain_invariants",
    "write_chain",
]
