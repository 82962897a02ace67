"""Reserve pooling and demand-response dispatch across load units.

The aggregator never re-optimizes: it sums the units' declared exchanges and
reserves, prices the pooled band, and splits an in-band request across units
in proportion to the reserve each declared in the requested direction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ludap import LuPlan
from .timegrid import PriceSet, TimeGrid


@dataclass(frozen=True)
class AggregatePlan:
    """Pooled base exchange, reserve band and programmed reserve income."""

    grid: TimeGrid
    e_agt: np.ndarray        # kWh per step
    de_up_agt: np.ndarray    # kWh >= 0
    de_dn_agt: np.ndarray    # kWh <= 0
    income: float            # EUR


@dataclass(frozen=True)
class DispatchSignal:
    """A DR request and its per-unit decomposition (kWh per step)."""

    de_agt_ref: np.ndarray
    de_ref: np.ndarray       # shape (H, T)


def _same_grid(plans: list[LuPlan]) -> TimeGrid:
    if not plans:
        raise ValueError("at least one unit plan is required")
    grid = plans[0].grid
    for p in plans[1:]:
        if (p.grid.T, p.grid.dt) != (grid.T, grid.dt):
            raise ValueError("unit plans use different time grids")
    return grid


def aggregate(plans: list[LuPlan], prices: PriceSet,
              grid: TimeGrid | None = None) -> AggregatePlan:
    """Pool unit plans; income prices the whole reserve band both ways."""
    if plans:
        grid = _same_grid(plans)
    elif grid is None:
        raise ValueError("grid is required when pooling zero plans")
    prices.check_grid(grid)
    e = np.zeros(grid.T)
    up = np.zeros(grid.T)
    dn = np.zeros(grid.T)
    for p in plans:
        e += p.e_hat
        up += p.de_up
        dn += p.de_dn
    spread = prices.c_flx_agt.values - prices.c_flx.values
    income = float((spread * (up - dn)).sum())
    return AggregatePlan(grid=grid, e_agt=e, de_up_agt=up, de_dn_agt=dn,
                         income=income)


def dispatch(agg: AggregatePlan, plans: list[LuPlan],
             de_agt_ref: np.ndarray) -> DispatchSignal:
    """Split an in-band DR request proportionally to declared reserves.

    Each unit receives its fraction of the pooled positive (negative)
    reserve applied to the positive (negative) part of the request, so the
    shares conserve the request exactly and stay inside every unit's band.
    """
    grid = _same_grid(plans)
    ref = np.asarray(de_agt_ref, dtype=float)
    if ref.shape != (grid.T,):
        raise ValueError(f"request must have length {grid.T}")
    tol = 1e-9
    over = np.flatnonzero(ref > agg.de_up_agt + tol)
    under = np.flatnonzero(ref < agg.de_dn_agt - tol)
    if over.size or under.size:
        k = int(min([*over, *under]))
        raise ValueError(
            f"request outside the declared band at step {k}: "
            f"{ref[k]:.6f} kWh not in "
            f"[{agg.de_dn_agt[k]:.6f}, {agg.de_up_agt[k]:.6f}]")

    pos = np.maximum(ref, 0.0)
    neg = np.minimum(ref, 0.0)
    shares = np.zeros((len(plans), grid.T))
    for h, p in enumerate(plans):
        gamma_up = np.divide(p.de_up, agg.de_up_agt,
                             out=np.zeros(grid.T), where=agg.de_up_agt > 0)
        gamma_dn = np.divide(p.de_dn, agg.de_dn_agt,
                             out=np.zeros(grid.T), where=agg.de_dn_agt < 0)
        shares[h] = gamma_up * pos + gamma_dn * neg
    return DispatchSignal(de_agt_ref=ref.copy(), de_ref=shares)
