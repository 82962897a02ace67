"""LP solve and exact branch-and-bound on binary variables.

The branch-and-bound keeps a single :class:`Tableau` alive and re-solves each
node with the dual simplex after swapping in that node's binary fixings
(bound changes never break dual feasibility, so warm starts are cheap).

Search rules are fixed for reproducibility: best-bound node selection
(ties broken deepest-first, then insertion order, which turns the frequent
cost-neutral scheduling plateaus into cheap dives instead of an exponential
breadth-first frontier), branching on the most fractional binary with
lowest-id tie-breaking.  Two rounding heuristics run at every node --
nearest-integer and ceiling (the feasible direction for gate binaries that
only relax constraints when raised); candidates are accepted only after a
full feasibility check against the model, so they can only ever tighten the
incumbent.
"""

from __future__ import annotations

import heapq

import numpy as np

from .model import (FEAS_TOL, INFEASIBLE, INT_TOL, KernelError, Model,
                    NODE_LIMIT, OPT_TOL, OPTIMAL, Solution, UNBOUNDED)
from .simplex import CUTOFF, Tableau

#: builtin solver refuses models with more free binaries than this unless the
#: caller raises the ceiling explicitly (bigger models belong to the LP-file
#: bridge or to a caller that knows its structure keeps the tree shallow)
DEFAULT_MAX_BINARIES = 200

DEFAULT_NODE_LIMIT = 200_000


def solve_lp(model: Model) -> Solution:
    """Solve the LP relaxation (binaries relaxed to their bounds in [0,1])."""
    tab = Tableau(model)
    status = tab.solve_cold()
    if status != OPTIMAL:
        return Solution(status=status, iterations=tab.iterations)
    x = tab.structural_values()
    obj = model.objective.value(x)
    return Solution(status=OPTIMAL, values=x, objective_value=obj,
                    iterations=tab.iterations)


def _rounded_candidates(model: Model, x: np.ndarray, bins: np.ndarray):
    """Feasible integral points obtained by rounding, best effort."""
    out = []
    for mode in ("nearest", "ceil"):
        xr = x.copy()
        if mode == "nearest":
            xr[bins] = np.round(xr[bins])
        else:
            xr[bins] = np.ceil(xr[bins] - INT_TOL)
        # respect explicit fixings
        xr[bins] = np.clip(xr[bins], np.array(model.lo)[bins],
                           np.array(model.hi)[bins])
        viol, _ = model.check_point(xr, FEAS_TOL)
        if viol <= FEAS_TOL:
            out.append(xr)
    return out


def solve_milp(model: Model, node_limit: int = DEFAULT_NODE_LIMIT,
               max_binaries: int | None = DEFAULT_MAX_BINARIES) -> Solution:
    """Exact minimization over binary assignments via branch-and-bound."""
    bins = model.free_binaries()
    if max_binaries is not None and len(bins) > max_binaries:
        raise ValueError(
            f"model has {len(bins)} free binaries, above the builtin ceiling "
            f"of {max_binaries}; raise max_binaries or use the LP-file bridge")
    bins_arr = np.array(bins, dtype=int)

    tab = Tableau(model)
    status = tab.solve_cold()
    if status in (INFEASIBLE, UNBOUNDED):
        return Solution(status=status, iterations=tab.iterations)

    inc_obj = np.inf
    inc_x: np.ndarray | None = None
    incumbent_log: list[float] = []
    nodes = 0
    seq = 0
    # heap entries: (quantized parent bound, -depth, insertion order,
    # exact parent bound, fixings).  Ordering by a quantized bound makes
    # float-noise-level bound differences genuine ties, and deepest-first
    # tie-breaking then resolves cost-neutral scheduling plateaus by diving
    # instead of an exponential breadth-first frontier.  Pruning always uses
    # the exact bound.
    def quantize(obj: float) -> float:
        return np.floor(obj / 1e-7)

    heap: list = [(-np.inf, 0, 0, -np.inf, {})]

    def consider(obj: float, x: np.ndarray) -> None:
        nonlocal inc_obj, inc_x
        if obj < inc_obj - 1e-12:
            inc_obj, inc_x = obj, x.copy()
            incumbent_log.append(obj)

    while heap:
        _, neg_depth, _, bound, fixings = heapq.heappop(heap)
        if bound >= inc_obj - OPT_TOL:
            continue  # parent bound already proves this node cannot win
        if nodes >= node_limit:
            return Solution(status=NODE_LIMIT, values=inc_x,
                            objective_value=inc_obj if inc_x is not None
                            else np.nan,
                            nodes=nodes, iterations=tab.iterations,
                            incumbent_log=incumbent_log)
        tab.set_bounds(fixings)
        try:
            status = tab.resolve(obj_limit=inc_obj - OPT_TOL)
        except KernelError:
            # numerical breakdown in the warm path: retry this node cold
            status = tab.solve_cold()
        nodes += 1
        if status in (INFEASIBLE, CUTOFF):
            continue
        if status == UNBOUNDED:
            # cannot happen after a bounded root unless the root was unbounded
            raise KernelError("node relaxation unbounded below a bounded root")
        x = tab.structural_values()
        obj = model.objective.value(x)
        if obj >= inc_obj - OPT_TOL:
            continue

        frac = np.abs(x[bins_arr] - np.round(x[bins_arr])) if bins else \
            np.zeros(0)
        if frac.size == 0 or frac.max() <= INT_TOL:
            consider(obj, x)
            continue

        for cand in _rounded_candidates(model, x, bins_arr):
            consider(model.objective.value(cand), cand)
        if obj >= inc_obj - OPT_TOL:
            continue  # the LP bound says this subtree cannot beat it

        # most fractional binary, ties broken by lowest variable id
        pick = int(bins_arr[np.argmax(frac)])
        for val in (1.0, 0.0):
            child = dict(fixings)
            child[pick] = (val, val)
            seq += 1
            heapq.heappush(heap, (quantize(obj), neg_depth - 1, seq, obj,
                                  child))

    if inc_x is None:
        return Solution(status=INFEASIBLE, nodes=nodes,
                        iterations=tab.iterations)
    return Solution(status=OPTIMAL, values=inc_x, objective_value=inc_obj,
                    nodes=nodes, iterations=tab.iterations,
                    incumbent_log=incumbent_log)
