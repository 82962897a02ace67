"""Generic MILP layer: model container, builtin solver, LP-file bridge."""

from .model import (BINARY, CONTINUOUS, EQ, FEAS_TOL, GE, INFEASIBLE, INT_TOL,
                    KernelError, LE, LinExpr, Model, NODE_LIMIT, OPT_TOL,
                    OPTIMAL, Solution, UNBOUNDED, lsum)
from .branch_bound import (DEFAULT_MAX_BINARIES, DEFAULT_NODE_LIMIT, solve_lp,
                           solve_milp)
from .lpfile import read_solution_file, write_lp_file

__all__ = [
    "BINARY", "CONTINUOUS", "EQ", "FEAS_TOL", "GE", "INFEASIBLE", "INT_TOL",
    "KernelError", "LE", "LinExpr", "Model", "NODE_LIMIT", "OPT_TOL",
    "OPTIMAL", "Solution", "UNBOUNDED", "lsum",
    "DEFAULT_MAX_BINARIES", "DEFAULT_NODE_LIMIT", "solve_lp", "solve_milp",
    "read_solution_file", "write_lp_file",
]
