"""Dense bounded-variable simplex on a full tableau.

Rows are kept as equalities ``A x + s = b`` with one slack per row whose
bounds encode the relation (<=: s >= 0, =: s == 0, >=: s <= 0).  Nonbasic
variables rest at a finite bound (or at zero when free); the tableau stores
``B^-1 [A | I]`` densely and is updated in place by rank-one pivots, which is
plenty at the scale this package targets.

Two entry points:

* :meth:`Tableau.solve_cold` -- fresh solve.  Starts the dual simplex from the
  all-slack basis when every movable variable has a finite bound on its
  cost-preferred side, otherwise runs the classic two-phase primal simplex
  with artificial variables.
* :meth:`Tableau.resolve` -- re-optimize after variable-bound changes only
  (the branch-and-bound case).  Reduced costs do not depend on bounds, so the
  current basis stays dual-feasible and the dual simplex finishes in a
  handful of pivots.

Anti-cycling: Bland's rule is engaged after ``3*(m+n)`` consecutive
degenerate pivots and kept for the remainder of the solve.  A hard iteration
cap turns a would-be infinite loop into :class:`KernelError`.
"""

from __future__ import annotations

import numpy as np

from .model import (EQ, GE, INFEASIBLE, KernelError, LE, Model, OPTIMAL,
                    UNBOUNDED)

# nonbasic/basic states
AT_LO, AT_HI, BASIC, FREE = 0, 1, 2, 3

#: node LP aborted because its objective passed the incumbent's
CUTOFF = "cutoff"

_DTOL = 1e-9      # reduced-cost tolerance
_PTOL = 1e-9      # bound-violation tolerance inside the solver
_PIV_TOL = 1e-11  # hard floor for an executed pivot element
_REFRESH = 512    # recompute basic values/reduced costs every this many pivots
_INF = np.inf


def _piv_floor(pivots_since_refactor: int) -> float:
    """Candidate pivots must clear this magnitude.

    Entries of a drifted tableau around 1e-9 are indistinguishable from
    decayed zeros, so only a freshly factorized tableau may pivot small.
    """
    return 1e-11 if pivots_since_refactor == 0 else 1e-9


class Tableau:
    """Simplex working state for one model (shared across B&B nodes)."""

    def __init__(self, model: Model):
        A, rel, b, lo, hi, c, c0 = model.dense()
        m, n = A.shape
        self.m, self.n = m, n
        self.ncols0 = n + m
        self._A0 = A
        self.b = b
        self.obj_const = c0

        rel = np.array(rel)
        slack_lo = np.where(rel == GE, -_INF, 0.0)
        slack_hi = np.where(rel == LE, _INF, 0.0)
        self.root_lo = np.concatenate([lo, slack_lo])
        self.root_hi = np.concatenate([hi, slack_hi])
        self.cost0 = np.concatenate([c, np.zeros(m)])

        self.lo = self.root_lo.copy()
        self.hi = self.root_hi.copy()
        self.iterations = 0

        # tableau state, created by solve_cold
        self.ncols = self.ncols0
        self.C = np.empty((0, 0))
        self.cost = self.cost0.copy()
        self.basis = np.arange(n, n + m)
        self.state = np.full(self.ncols0, AT_LO, dtype=np.int8)
        self.rhs0 = b.copy()
        self.d = self.cost0.copy()
        self.xB = np.zeros(m)
        self._full = None            # original [A | I | artificials]
        self._pivots_since_refactor = 0

    # ------------------------------------------------------------------
    # values
    # ------------------------------------------------------------------

    def _nonbasic_values(self) -> np.ndarray:
        v = np.where(self.state == AT_HI, self.hi, self.lo)
        v[self.state == FREE] = 0.0
        v[self.state == BASIC] = 0.0
        return v

    def _refresh_xB(self) -> None:
        v = self._nonbasic_values()
        self.xB = self.rhs0 - self.C @ v

    def _refresh_d(self, cost: np.ndarray) -> None:
        self.d = cost - cost[self.basis] @ self.C

    def values(self) -> np.ndarray:
        """Current value of every column (structural + slack + artificial)."""
        v = self._nonbasic_values()
        v[self.basis] = self.xB
        return v

    def structural_values(self) -> np.ndarray:
        return self.values()[: self.n]

    def objective_value(self) -> float:
        return float(self.cost @ self.values()) + self.obj_const

    # ------------------------------------------------------------------
    # pivoting
    # ------------------------------------------------------------------

    def _pivot(self, r: int, q: int) -> None:
        piv = self.C[r, q]
        if abs(piv) < _PIV_TOL:
            raise KernelError(f"pivot element too small ({piv:.3e})")
        colv = self.C[:, q].copy()
        row = self.C[r] / piv
        # rank-one update restricted to the nonzero block; time-indexed
        # models keep the tableau patchy, which makes this much cheaper
        nzc = np.flatnonzero(np.abs(row) > 1e-13)
        nzr = np.flatnonzero(np.abs(colv) > 1e-13)
        if nzr.size * nzc.size > 0.35 * self.C.size:
            self.C -= np.outer(colv, row)
        else:
            self.C[nzr[:, None], nzc] -= np.outer(colv[nzr], row[nzc])
        self.C[r] = row
        t = self.rhs0[r] / piv
        self.rhs0 -= colv * t
        self.rhs0[r] = t
        self.d = self.d - self.d[q] * row
        self.d[q] = 0.0

    def _nb_value(self, q: int) -> float:
        st = self.state[q]
        if st == AT_LO:
            return self.lo[q]
        if st == AT_HI:
            return self.hi[q]
        return 0.0

    def _leave_enter(self, r: int, q: int, new_q_value: float,
                     leave_state: int) -> None:
        p = self.basis[r]
        delta = new_q_value - self._nb_value(q)
        self.xB = self.xB - delta * self.C[:, q]
        self._pivot(r, q)
        self.basis[r] = q
        self.state[q] = BASIC
        self.state[p] = leave_state
        self.xB[r] = new_q_value
        self.iterations += 1
        self._pivots_since_refactor += 1

    # long chains of in-place rank-one updates drift; rebuilding B^-1[A|I]
    # from the pristine columns restores the invariants exactly
    _REFACTOR_EVERY = 750

    def refactorize(self, cost: np.ndarray) -> None:
        if len(np.unique(self.basis)) != self.m:
            raise KernelError("duplicate column in basis")
        B = self._full[:, self.basis]
        try:
            self.C = np.linalg.solve(B, self._full)
            self.rhs0 = np.linalg.solve(B, self.b)
        except np.linalg.LinAlgError as exc:
            raise KernelError("singular basis during refactorization") from exc
        self._refresh_d(cost)
        self._refresh_xB()
        self._pivots_since_refactor = 0

    # ------------------------------------------------------------------
    # primal simplex
    # ------------------------------------------------------------------

    def _primal(self, cost: np.ndarray, max_iter: int,
                dtol: float = _DTOL) -> str:
        """Primal iterations until optimal/unbounded for the given costs."""
        movable = self.lo < self.hi
        bland = False
        degenerate_streak = 0
        bland_after = 3 * (self.m + self.ncols)
        for it in range(max_iter):
            if self._pivots_since_refactor >= self._REFACTOR_EVERY:
                self.refactorize(cost)
            elif it and it % _REFRESH == 0:
                self._refresh_xB()
                self._refresh_d(cost)
            d = self.d
            up = movable & ((self.state == AT_LO) & (d < -dtol) |
                            (self.state == FREE) & (d < -dtol))
            dn = movable & ((self.state == AT_HI) & (d > dtol) |
                            (self.state == FREE) & (d > dtol))
            score = np.where(up, -d, np.where(dn, d, -_INF))
            if not np.any(score > dtol):
                return OPTIMAL
            if bland:
                q = int(np.flatnonzero(score > dtol)[0])
            else:
                q = int(np.argmax(score))
            sigma = 1.0 if up[q] else -1.0

            floor = _piv_floor(self._pivots_since_refactor)
            col = sigma * self.C[:, q]
            lo_B = self.lo[self.basis]
            hi_B = self.hi[self.basis]
            theta = np.full(self.m, _INF)
            blk_lo = col > floor
            blk_hi = col < -floor
            theta[blk_lo] = np.maximum(self.xB[blk_lo] - lo_B[blk_lo], 0.0) \
                / col[blk_lo]
            theta[blk_hi] = np.maximum(hi_B[blk_hi] - self.xB[blk_hi], 0.0) \
                / (-col[blk_hi])
            theta_flip = (self.hi[q] - self.lo[q]
                          if self.state[q] != FREE else _INF)
            theta_row = float(theta.min(initial=_INF))
            if min(theta_row, theta_flip) == _INF:
                # only trust a certificate from a fresh-enough tableau
                if self._pivots_since_refactor > 500:
                    self.refactorize(cost)
                    continue
                return UNBOUNDED

            if theta_flip <= theta_row:
                self.xB = self.xB - theta_flip * col
                self.state[q] = AT_HI if sigma > 0 else AT_LO
                self.iterations += 1
                degenerate_streak = 0
                continue

            # stability slack in the tie set lets us take the largest pivot
            eligible = np.flatnonzero(theta <= theta_row * (1 + 1e-6) + 1e-9)
            if bland:
                r = int(eligible[np.argmin(self.basis[eligible])])
            else:
                r = int(eligible[np.argmax(np.abs(col[eligible]))])
            leave_state = AT_LO if col[r] > 0 else AT_HI
            self._leave_enter(r, q, self._nb_value(q) + sigma * theta[r],
                              leave_state)

            if theta[r] <= 1e-12:
                degenerate_streak += 1
                if degenerate_streak > bland_after:
                    bland = True
            else:
                degenerate_streak = 0
        raise KernelError("primal simplex iteration guard exceeded")

    # ------------------------------------------------------------------
    # dual simplex
    # ------------------------------------------------------------------

    def _dual(self, max_iter: int, obj_limit: float = _INF) -> str:
        """Dual iterations from a dual-feasible basis until primal feasible.

        The dual objective is non-decreasing, so once it exceeds
        ``obj_limit`` the node can never beat the incumbent and the solve
        aborts with ``"cutoff"``.
        """
        if self.m == 0:
            return OPTIMAL
        bland = False
        degenerate_streak = 0
        bland_after = 3 * (self.m + self.ncols)
        movable = self.lo < self.hi
        for it in range(max_iter):
            if self._pivots_since_refactor >= self._REFACTOR_EVERY:
                self.refactorize(self.cost)
            elif it and it % _REFRESH == 0:
                self._refresh_xB()
                self._refresh_d(self.cost)
            if obj_limit < _INF and self.objective_value() > obj_limit:
                return CUTOFF
            lo_B = self.lo[self.basis]
            hi_B = self.hi[self.basis]
            viol = np.maximum(lo_B - self.xB, self.xB - hi_B)
            r = int(np.argmax(viol))
            if viol[r] <= _PTOL:
                return OPTIMAL
            below = self.xB[r] < lo_B[r]
            a = self.C[r]

            floor = _piv_floor(self._pivots_since_refactor)
            if below:
                cand = (((self.state == AT_LO) & (a < -floor)) |
                        ((self.state == AT_HI) & (a > floor)) |
                        ((self.state == FREE) & (np.abs(a) > floor)))
            else:
                cand = (((self.state == AT_LO) & (a > floor)) |
                        ((self.state == AT_HI) & (a < -floor)) |
                        ((self.state == FREE) & (np.abs(a) > floor)))
            cand &= movable
            idx = np.flatnonzero(cand)
            if idx.size == 0:
                # only trust a certificate from a fresh-enough tableau
                if self._pivots_since_refactor > 500:
                    self.refactorize(self.cost)
                    continue
                return INFEASIBLE

            ratios = np.abs(self.d[idx] / a[idx])
            rmin = float(ratios.min())
            # stability slack in the tie set lets us take the largest pivot
            close = idx[ratios <= rmin * (1 + 1e-6) + 1e-9]
            if bland:
                q = int(close.min())
            else:
                q = int(close[np.argmax(np.abs(a[close]))])

            target = lo_B[r] if below else hi_B[r]
            delta_v = -(target - self.xB[r]) / a[q]
            leave_state = AT_LO if below else AT_HI
            self._leave_enter(r, q, self._nb_value(q) + delta_v, leave_state)

            if abs(delta_v) <= 1e-12:
                degenerate_streak += 1
                if degenerate_streak > bland_after:
                    bland = True
            else:
                degenerate_streak = 0
        raise KernelError("dual simplex iteration guard exceeded")

    # ------------------------------------------------------------------
    # start bases
    # ------------------------------------------------------------------

    def _max_iter(self) -> int:
        return 10_000 + 100 * (self.m + self.ncols)

    def _dual_startable(self) -> bool:
        """All movable columns can rest on a finite, dual-feasible bound."""
        lo, hi, c = self.lo[: self.ncols0], self.hi[: self.ncols0], self.cost0
        ok = np.where(c > _DTOL, np.isfinite(lo),
                      np.where(c < -_DTOL, np.isfinite(hi),
                               np.isfinite(lo) | np.isfinite(hi)))
        return bool(np.all(ok | (lo >= hi)))

    def _park_nonbasic(self, dual_pref: bool) -> None:
        """Assign a resting side to every nonbasic column."""
        lo, hi = self.lo, self.hi
        fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
        if dual_pref:
            side_hi = (self.cost < -_DTOL) & fin_hi | (~fin_lo & fin_hi)
        else:
            side_hi = ~fin_lo & fin_hi
        self.state[:] = AT_LO
        self.state[side_hi] = AT_HI
        self.state[~fin_lo & ~fin_hi] = FREE
        self.state[self.basis] = BASIC

    def solve_cold(self) -> str:
        """Fresh solve from the all-slack basis under the current bounds."""
        m, n = self.m, self.n
        self.ncols = self.ncols0
        self.C = np.hstack([self._A0, np.eye(m)])
        self._full = self.C.copy()
        self._pivots_since_refactor = 0
        self.lo = self.lo[: self.ncols0].copy()
        self.hi = self.hi[: self.ncols0].copy()
        self.cost = self.cost0.copy()
        self.state = np.full(self.ncols0, AT_LO, dtype=np.int8)
        self.basis = np.arange(n, n + m)
        self.rhs0 = self.b.copy()
        self.d = self.cost0.copy()

        if self._dual_startable():
            self._park_nonbasic(dual_pref=True)
            self._refresh_xB()
            status = self._dual(self._max_iter())
            if status != OPTIMAL:
                return status
            # cost-zero bound flips may remain; finish with primal pricing
            return self._primal(self.cost, self._max_iter())
        self._park_nonbasic(dual_pref=False)
        self._refresh_xB()
        return self._two_phase()

    def _two_phase(self) -> str:
        viol_lo = self.xB < self.lo[self.basis] - _PTOL
        viol_hi = self.xB > self.hi[self.basis] + _PTOL
        bad = np.flatnonzero(viol_lo | viol_hi)
        if bad.size:
            n_art = bad.size
            first_art = self.ncols
            art_cols = np.zeros((self.m, n_art))
            art_lo = np.zeros(n_art)
            art_hi = np.zeros(n_art)
            phase1_cost = np.zeros(self.ncols + n_art)
            for j, i in enumerate(bad):
                s = self.basis[i]
                bound = self.lo[s] if viol_lo[i] else self.hi[s]
                resid = self.xB[i] - bound
                art_cols[i, j] = 1.0
                # artificial takes the signed residual; cost drives |w| to 0
                if resid > 0:
                    art_lo[j], art_hi[j] = 0.0, _INF
                    phase1_cost[first_art + j] = 1.0
                else:
                    art_lo[j], art_hi[j] = -_INF, 0.0
                    phase1_cost[first_art + j] = -1.0
                self.state[s] = AT_LO if viol_lo[i] else AT_HI
            self.C = np.hstack([self.C, art_cols])
            self._full = np.hstack([self._full, art_cols])
            self.lo = np.concatenate([self.lo, art_lo])
            self.hi = np.concatenate([self.hi, art_hi])
            self.cost = np.concatenate([self.cost, np.zeros(n_art)])
            self.state = np.concatenate(
                [self.state, np.full(n_art, BASIC, dtype=np.int8)])
            self.basis[bad] = first_art + np.arange(n_art)
            self.ncols += n_art

            self._refresh_xB()
            self._refresh_d(phase1_cost)
            status = self._primal(phase1_cost, self._max_iter())
            if status != OPTIMAL:
                raise KernelError("phase-1 subproblem reported " + status)
            if float(phase1_cost @ self.values()) > 1e-7:
                return INFEASIBLE
            # pin artificials at zero for the rest of this tableau's life
            self.lo[first_art:] = 0.0
            self.hi[first_art:] = 0.0
        self._refresh_d(self.cost)
        self._refresh_xB()
        return self._primal(self.cost, self._max_iter())

    # ------------------------------------------------------------------
    # warm re-solve after bound changes
    # ------------------------------------------------------------------

    def set_bounds(self, fixings: dict[int, tuple[float, float]]) -> None:
        """Reset bounds to the model's and apply per-variable overrides."""
        self.lo[: self.ncols0] = self.root_lo
        self.hi[: self.ncols0] = self.root_hi
        for v, (lo, hi) in fixings.items():
            self.lo[v] = lo
            self.hi[v] = hi

    def resolve(self, obj_limit: float = _INF) -> str:
        """Re-optimize after bound changes, reusing the current basis."""
        self._refresh_d(self.cost)
        nonbasic = self.state != BASIC
        movable = (self.lo < self.hi) & nonbasic
        to_lo = movable & (self.d > _DTOL)
        to_hi = movable & (self.d < -_DTOL)
        if np.any(to_lo & ~np.isfinite(self.lo)) or \
           np.any(to_hi & ~np.isfinite(self.hi)):
            return self.solve_cold()
        self.state[to_lo] = AT_LO
        self.state[to_hi] = AT_HI
        # park cost-neutral columns on a finite side
        swap_hi = nonbasic & (self.state == AT_LO) & ~np.isfinite(self.lo)
        self.state[swap_hi & np.isfinite(self.hi)] = AT_HI
        swap_lo = nonbasic & (self.state == AT_HI) & ~np.isfinite(self.hi)
        self.state[swap_lo & np.isfinite(self.lo)] = AT_LO
        self.state[nonbasic & ~np.isfinite(self.lo) & ~np.isfinite(self.hi)] = FREE
        self._refresh_xB()
        status = self._dual(self._max_iter(), obj_limit)
        if status != OPTIMAL:
            return status
        # slightly loosened polish: a finished dual solve is optimal modulo
        # reduced-cost drift, so do not walk degenerate plateaus for noise
        return self._primal(self.cost, self._max_iter(), dtol=1e-8)
