"""Textual bridge to external MILP solvers.

:func:`write_lp_file` emits the de-facto LP format (sections Minimize /
Subject To / Bounds / Binaries / End) with deterministic variable names
``v0..vN`` in declaration order, so any mainstream solver can consume the
model.  :func:`read_solution_file` imports a ``name value`` listing and
re-checks it against the model before accepting it; points that violate any
constraint beyond the feasibility tolerance are rejected, never trusted.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .model import (BINARY, EQ, FEAS_TOL, GE, INT_TOL, LE, LinExpr, Model,
                    OPTIMAL, Solution)


def _fmt(x: float) -> str:
    return format(x, ".12g")


def _expr_text(expr: LinExpr) -> str:
    parts = []
    for v in sorted(expr.terms):
        c = expr.terms[v]
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {_fmt(abs(c))} v{v}")
    if not parts:
        return "0 v0"
    text = " ".join(parts)
    return text[2:] if text.startswith("+ ") else text


def write_lp_file(model: Model, path) -> Path:
    """Write the model in LP format; returns the path written."""
    path = Path(path)
    lines = ["Minimize", f" obj: {_expr_text(model.objective)}"]
    if model.objective.const:
        # LP format allows a bare constant in the objective
        c = model.objective.const
        lines[1] += f" {'-' if c < 0 else '+'} {_fmt(abs(c))}"
    lines.append("Subject To")
    rel_text = {LE: "<=", EQ: "=", GE: ">="}
    for i, con in enumerate(model.constraints):
        lines.append(
            f" c{i}: {_expr_text(con.expr)} {rel_text[con.relation]} "
            f"{_fmt(con.rhs)}")
    lines.append("Bounds")
    for v in range(model.num_vars):
        lo, hi = model.lo[v], model.hi[v]
        if lo == hi:
            lines.append(f" v{v} = {_fmt(lo)}")
        elif math.isinf(lo) and math.isinf(hi):
            lines.append(f" v{v} free")
        elif math.isinf(hi):
            lines.append(f" v{v} >= {_fmt(lo)}")
        elif math.isinf(lo):
            lines.append(f" v{v} <= {_fmt(hi)}")
        else:
            lines.append(f" {_fmt(lo)} <= v{v} <= {_fmt(hi)}")
    binaries = model.binaries()
    if binaries:
        lines.append("Binaries")
        lines.append(" " + " ".join(f"v{v}" for v in binaries))
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_solution_file(path, model: Model) -> Solution:
    """Import and validate an externally produced `varname value` listing."""
    path = Path(path)
    values = np.full(model.num_vars, np.nan)
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'name value', "
                             f"got {raw!r}")
        name, val = parts
        if not name.startswith("v") or not name[1:].isdigit():
            raise ValueError(f"{path}:{lineno}: unknown variable {name!r}")
        vid = int(name[1:])
        if vid >= model.num_vars:
            raise ValueError(f"{path}:{lineno}: unknown variable {name!r}")
        values[vid] = float(val)

    missing = np.flatnonzero(np.isnan(values))
    if missing.size:
        raise ValueError(
            f"{path}: missing values for variables "
            + ", ".join(f"v{v}" for v in missing[:10]))

    viol, worst = model.check_point(values, FEAS_TOL)
    if viol > FEAS_TOL:
        raise ValueError(
            f"{path}: imported point violates {worst} by {viol:.3e}")
    for v in model.binaries():
        if abs(values[v] - round(values[v])) > INT_TOL:
            raise ValueError(
                f"{path}: binary v{v} has fractional value {values[v]}")
    return Solution(status=OPTIMAL, values=values,
                    objective_value=model.objective.value(values))
