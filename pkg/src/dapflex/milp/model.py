"""Mixed-integer linear model container.

A :class:`Model` is a plain list of bounded variables (continuous or binary),
linear constraints and one linear objective, always minimized.  Variables are
opaque integer handles handed out by :meth:`Model.add_var`; expressions are
built with :class:`LinExpr` which supports ``+``, ``-`` and scalar ``*``.

The container is deliberately dumb: emitters append to it, solvers read it.
Ordering of variables and constraints is insertion order, which makes every
downstream serialization deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONTINUOUS = "continuous"
BINARY = "binary"

LE, EQ, GE = "<=", "=", ">="
_RELATIONS = (LE, EQ, GE)

# statuses
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NODE_LIMIT = "node_limit"

FEAS_TOL = 1e-6
INT_TOL = 1e-6
OPT_TOL = 1e-6


class KernelError(RuntimeError):
    """Internal solver failure (cycling guard, numerical breakdown)."""


class LinExpr:
    """Sparse linear expression: sum of coef*var plus a constant."""

    __slots__ = ("terms", "const")

    def __init__(self, terms: dict[int, float] | None = None, const: float = 0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def term(var: int, coef: float = 1.0) -> "LinExpr":
        if coef == 0.0:
            return LinExpr()
        return LinExpr({int(var): float(coef)})

    def copy(self) -> "LinExpr":
        return LinExpr(self.terms, self.const)

    def add_term(self, var: int, coef: float) -> "LinExpr":
        if coef != 0.0:
            c = self.terms.get(var, 0.0) + coef
            if c == 0.0:
                self.terms.pop(var, None)
            else:
                self.terms[var] = c
        return self

    def __add__(self, other):
        out = self.copy()
        if isinstance(other, LinExpr):
            for v, c in other.terms.items():
                out.add_term(v, c)
            out.const += other.const
        else:
            out.const += float(other)
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other if isinstance(other, LinExpr) else -float(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar: float):
        s = float(scalar)
        if s == 0.0:
            return LinExpr()
        return LinExpr({v: c * s for v, c in self.terms.items()}, self.const * s)

    __rmul__ = __mul__

    def value(self, values: dict[int, float] | np.ndarray) -> float:
        return self.const + sum(c * values[v] for v, c in self.terms.items())

    def __repr__(self):
        parts = [f"{c:+g}*v{v}" for v, c in sorted(self.terms.items())]
        if self.const or not parts:
            parts.append(f"{self.const:+g}")
        return " ".join(parts)


def lsum(exprs) -> LinExpr:
    """Sum of LinExprs / scalars (like ``sum`` but starting from LinExpr)."""
    out = LinExpr()
    for e in exprs:
        out = out + e
    return out


@dataclass
class Constraint:
    expr: LinExpr
    relation: str
    rhs: float
    name: str = ""


class Model:
    """A minimization MILP under construction."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.kind: list[str] = []
        self.var_names: list[str] = []
        self.constraints: list[Constraint] = []
        self.objective: LinExpr = LinExpr()

    # -- building -----------------------------------------------------------

    @property
    def num_vars(self) -> int:
        return len(self.lo)

    def add_var(self, lo: float, hi: float, kind: str = CONTINUOUS,
                name: str = "") -> int:
        if kind not in (CONTINUOUS, BINARY):
            raise ValueError(f"unknown variable kind {kind!r}")
        lo, hi = float(lo), float(hi)
        if kind == BINARY:
            if lo not in (0.0, 1.0) or hi not in (0.0, 1.0):
                raise ValueError("binary variables must have bounds within {0,1}")
        if lo > hi:
            raise ValueError(f"empty bound interval [{lo}, {hi}]")
        vid = len(self.lo)
        self.lo.append(lo)
        self.hi.append(hi)
        self.kind.append(kind)
        self.var_names.append(name or f"v{vid}")
        return vid

    def add_binary(self, name: str = "", fixed: float | None = None) -> int:
        if fixed is None:
            return self.add_var(0.0, 1.0, BINARY, name)
        return self.add_var(fixed, fixed, BINARY, name)

    def fix_var(self, var: int, value: float) -> None:
        self.lo[var] = self.hi[var] = float(value)

    def add_constraint(self, expr: LinExpr, relation: str, rhs: float,
                       name: str = "") -> int:
        if relation not in _RELATIONS:
            raise ValueError(f"unknown relation {relation!r}")
        for v in expr.terms:
            if not 0 <= v < self.num_vars:
                raise ValueError(f"constraint references undeclared variable {v}")
        # fold the expression constant into the rhs so rows are pure terms
        row = Constraint(LinExpr(expr.terms), relation, float(rhs) - expr.const,
                         name or f"c{len(self.constraints)}")
        self.constraints.append(row)
        return len(self.constraints) - 1

    def set_objective(self, expr: LinExpr) -> None:
        for v in expr.terms:
            if not 0 <= v < self.num_vars:
                raise ValueError(f"objective references undeclared variable {v}")
        self.objective = expr.copy()

    # -- views --------------------------------------------------------------

    def binaries(self) -> list[int]:
        return [v for v in range(self.num_vars) if self.kind[v] == BINARY]

    def free_binaries(self) -> list[int]:
        return [v for v in self.binaries() if self.lo[v] < self.hi[v]]

    def dense(self):
        """Dense (A, relations, b, lo, hi, c, c0) arrays for the solver."""
        n, m = self.num_vars, len(self.constraints)
        A = np.zeros((m, n))
        b = np.zeros(m)
        rel = []
        for i, con in enumerate(self.constraints):
            for v, c in con.expr.terms.items():
                A[i, v] = c
            b[i] = con.rhs
            rel.append(con.relation)
        c = np.zeros(n)
        for v, coef in self.objective.terms.items():
            c[v] = coef
        return (A, rel, b, np.array(self.lo), np.array(self.hi), c,
                self.objective.const)

    def check_point(self, values: np.ndarray, tol: float = FEAS_TOL):
        """Max bound/constraint violation of a point; returns (viol, worst name)."""
        worst, worst_name = 0.0, ""
        for v in range(self.num_vars):
            viol = max(self.lo[v] - values[v], values[v] - self.hi[v])
            if viol > worst:
                worst, worst_name = viol, f"bound({self.var_names[v]})"
        for con in self.constraints:
            lhs = sum(c * values[v] for v, c in con.expr.terms.items())
            if con.relation == LE:
                viol = lhs - con.rhs
            elif con.relation == GE:
                viol = con.rhs - lhs
            else:
                viol = abs(lhs - con.rhs)
            if viol > worst:
                worst, worst_name = viol, con.name
        return worst, worst_name


@dataclass
class Solution:
    """Solver output: status, variable values and objective."""

    status: str
    values: np.ndarray | None = None
    objective_value: float = float("nan")
    nodes: int = 0
    iterations: int = 0
    # incumbent objective after each improvement, in discovery order
    incumbent_log: list[float] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def value(self, var: int) -> float:
        if self.values is None:
            raise ValueError(f"no values available (status={self.status})")
        return float(self.values[var])

    def expr_value(self, expr: LinExpr) -> float:
        if self.values is None:
            raise ValueError(f"no values available (status={self.status})")
        return expr.const + sum(c * self.values[v] for v, c in expr.terms.items())
