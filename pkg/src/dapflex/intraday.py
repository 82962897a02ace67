"""Intra-day simulation: replay a planned day under realized uncertainty.

Per step, every unit faces two additive demands on its reserve devices:

* the dispatched DR share, served from the *paid-reserve* (``flx``) part of
  the planned variations, scaled by one common factor per direction;
* compensation of the realized forecast error, served from the
  error-compensation (``unc``) part the same way.

Both commands scale each device's planned variation proportionally, so by
linearity the realized battery and temperature trajectories stay between the
planned over/under trajectories whenever the commands stay within the
planned budgets.  Errors beyond the ``unc`` budget are not silently clipped
into the devices: the shortfall goes to the grid connection and is logged as
an imbalance.

Everything observed (trajectories, violations, imbalances, delivered versus
requested energy) is recorded against raw device parameters, never against
the optimizer's constraint rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .aggregator import AggregatePlan, DispatchSignal, dispatch
from .devices import bess_soc_path, tcl_theta_path
from .ludap import LuConfig, LuPlan
from .timegrid import TimeGrid

_VIOL_TOL = 1e-6


@dataclass(frozen=True)
class UnitRealization:
    """One unit's realized stochastic inputs for one day."""

    res: list            # per RES device, kW generation (T,)
    ncd: np.ndarray      # kW (T,)
    ext: list            # per TCL device, degC (T,)

    def fixed_net(self, upd_profiles) -> np.ndarray:
        out = self.ncd.copy()
        for r in self.res:
            out -= r
        for u in upd_profiles:
            out += u.values
        return out


@dataclass(frozen=True)
class Realization:
    """Fleet-wide realized inputs, reproducible from the seed."""

    seed: int
    units: list


def realize(cfgs: list[LuConfig], grid: TimeGrid, seed: int) -> Realization:
    """Draw one day of independent per-step Gaussians around the forecasts.

    Draw order is fixed (unit, then RES / NCD / TCL-external in declaration
    order), which makes runs reproducible from the seed alone.
    """
    rng = np.random.default_rng(seed)
    units = []
    for cfg in cfgs:
        res = [rng.normal(f.mean.values, f.sigma.values)
               for f in cfg.fixed.res]
        if cfg.fixed.ncd is not None:
            ncd = rng.normal(cfg.fixed.ncd.mean.values,
                             cfg.fixed.ncd.sigma.values)
        else:
            ncd = np.zeros(grid.T)
        ext = [rng.normal(t.ext.mean.values, t.ext.sigma.values)
               for t in cfg.tcls]
        units.append(UnitRealization(res=res, ncd=ncd, ext=ext))
    return Realization(seed=int(seed), units=units)


def forecast_realization(cfgs: list[LuConfig], grid: TimeGrid) -> Realization:
    """The zero-error realization: every draw equals its forecast mean."""
    units = []
    for cfg in cfgs:
        units.append(UnitRealization(
            res=[f.mean.values.copy() for f in cfg.fixed.res],
            ncd=(cfg.fixed.ncd.mean.values.copy()
                 if cfg.fixed.ncd is not None else np.zeros(grid.T)),
            ext=[t.ext.mean.values.copy() for t in cfg.tcls]))
    return Realization(seed=-1, units=units)


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    return np.divide(num, den, out=np.zeros_like(num),
                     where=np.abs(den) > 1e-12)


@dataclass
class UnitDayResult:
    """Realized day of one unit: energies, trajectories, violations."""

    realized_kwh: np.ndarray
    imbalance_kwh: np.ndarray        # uncovered forecast error, grid-absorbed
    delivered_dr_kwh: np.ndarray     # deviation actually served vs the plan
    bess_soc: list                   # realized SoC paths, (T+1,) each
    bess_dev: list                   # realized battery power deviation (T,)
    tcl_theta: list                  # realized room temperature paths
    tcl_dev: list
    comfort_violation: np.ndarray    # per-step count over the unit's TCLs
    soc_violation: np.ndarray
    violations: dict = field(default_factory=dict)
    realized_cost: float = 0.0

    def worst(self) -> float:
        return max(self.violations.values(), default=0.0)


@dataclass
class SimReport:
    """One simulated day for the whole fleet."""

    seed: int
    units: list
    requested_kwh: np.ndarray        # aggregate DR request per step
    delivered_kwh: np.ndarray        # aggregate realized deviation per step
    agg_income: float

    @property
    def delivery_gap(self) -> np.ndarray:
        return self.delivered_kwh - self.requested_kwh

    def violation_counts(self) -> dict:
        out: dict[str, int] = {}
        for u in self.units:
            for name, mag in u.violations.items():
                if mag > _VIOL_TOL:
                    out[name] = out.get(name, 0) + 1
        return out


def _run_unit(plan: LuPlan, cfg: LuConfig, real: UnitRealization,
              de_ref: np.ndarray, grid: TimeGrid) -> UnitDayResult:
    T, dt = grid.T, grid.dt
    viol: dict[str, float] = {}

    def bump(key, amount):
        viol[key] = max(viol.get(key, 0.0), float(amount))

    fixed_real = real.fixed_net(cfg.fixed.upd)
    eps = fixed_real - plan.fixed_power          # kW, realized minus forecast

    # DR share scaling (flx budget; dispatch guarantees it is in band)
    ref_kw = de_ref / dt
    flx_up_tot = plan.de_up / dt
    flx_dn_tot = plan.de_dn / dt
    lam_flx_up = _safe_ratio(np.maximum(ref_kw, 0.0), flx_up_tot)
    lam_flx_dn = _safe_ratio(np.minimum(ref_kw, 0.0), flx_dn_tot)

    # forecast-error compensation (unc budget), tail goes to the grid
    unc_up_tot = (sum(b.unc_up for b in plan.besses)
                  + sum(t.unc_up for t in plan.tcls) + np.zeros(T))
    unc_dn_tot = (sum(b.unc_dn for b in plan.besses)
                  + sum(t.unc_dn for t in plan.tcls) + np.zeros(T))
    comp_need = -eps
    comp_del = np.clip(comp_need, unc_dn_tot, unc_up_tot)
    lam_unc_up = _safe_ratio(np.maximum(comp_del, 0.0), unc_up_tot)
    lam_unc_dn = _safe_ratio(np.minimum(comp_del, 0.0), unc_dn_tot)
    imbalance = (comp_need - comp_del) * dt

    device_real = np.zeros(T)
    bess_soc, bess_dev = [], []
    soc_viol_steps = np.zeros(T, dtype=int)
    for p, b in zip(cfg.besses, plan.besses):
        du_tot = b.du_ch + b.du_dsc
        dl_tot = b.dl_ch + b.dl_dsc
        up_use = lam_flx_up * b.flx_up + lam_unc_up * b.unc_up
        dn_use = lam_flx_dn * b.flx_dn + lam_unc_dn * b.unc_dn
        lam_u = _safe_ratio(up_use, du_tot)
        lam_d = _safe_ratio(dn_use, dl_tot)
        p_ch = b.p_ch + lam_u * b.du_ch + lam_d * b.dl_ch
        p_dsc = b.p_dsc + lam_u * b.du_dsc + lam_d * b.dl_dsc
        soc = bess_soc_path(p, p_ch, p_dsc, dt)
        bess_soc.append(soc)
        bess_dev.append(p_ch + p_dsc - b.p_ch - b.p_dsc)
        device_real += p_ch + p_dsc
        below = np.maximum(p.soc_min - soc[1:], 0.0)
        above = np.maximum(soc[1:] - p.soc_max, 0.0)
        soc_viol_steps += ((below > _VIOL_TOL) | (above > _VIOL_TOL))
        bump("soc_bounds", max(below.max(), above.max()))
        bump("bess_power", np.maximum(p_ch - p.p_max_ch, 0.0).max())
        bump("bess_power", np.maximum(-p_ch, 0.0).max())
        bump("bess_power", np.maximum(p.p_min_dsc - p_dsc, 0.0).max())
        bump("bess_power", np.maximum(p_dsc, 0.0).max())
        bump("cycle_cap", (p.eta_ch * dt / p.e_nom) * p_ch.sum() - p.l_ch)
        bump("cycle_cap",
             (-p.eta_dsc * dt / p.e_nom) * p_dsc.sum() - p.l_dsc)

    tcl_theta, tcl_dev = [], []
    comfort_steps = np.zeros(T, dtype=int)
    for p, t, ext in zip(cfg.tcls, plan.tcls, real.ext):
        up_use = lam_flx_up * t.flx_up + lam_unc_up * t.unc_up
        dn_use = lam_flx_dn * t.flx_dn + lam_unc_dn * t.unc_dn
        lam_u = _safe_ratio(up_use, t.du)
        lam_d = _safe_ratio(dn_use, t.dl)
        power = t.power + lam_u * t.du + lam_d * t.dl
        theta = tcl_theta_path(p, power, ext, dt)
        tcl_theta.append(theta)
        tcl_dev.append(power - t.power)
        device_real += power
        hot = np.maximum(theta[1:] - p.theta_max, 0.0)
        cold = np.maximum(p.theta_min - theta[1:], 0.0)
        comfort_steps += ((hot > _VIOL_TOL) | (cold > _VIOL_TOL))
        bump("comfort", max(hot.max(), cold.max()))
        up_mask = p.validate(grid, cfg.r)
        bump("tcl_power", np.maximum(power - up_mask * p.p_max, 0.0).max())
        bump("tcl_power", np.maximum(-power, 0.0).max())

    # phase appliances and vehicle charging replay their plan untouched
    for sched in plan.abps:
        device_real += sched.power.sum(axis=0)
    for sched in plan.pevs:
        device_real += sched.power

    p_real = device_real + fixed_real
    realized_kwh = p_real * dt
    bump("lu_cap", np.maximum(p_real - cfg.p_max, 0.0).max())
    bump("lu_cap", np.maximum(cfg.p_min - p_real, 0.0).max())

    c = cfg.prices
    e_imp = np.maximum(realized_kwh, 0.0)
    e_exp = np.minimum(realized_kwh, 0.0)
    cost = float((c.c_imp.values * e_imp - c.c_exp.values * e_exp
                  - c.c_flx.values * (plan.de_up - plan.de_dn)).sum())

    return UnitDayResult(
        realized_kwh=realized_kwh, imbalance_kwh=imbalance,
        delivered_dr_kwh=realized_kwh - plan.e_hat - (eps + comp_del) * dt,
        bess_soc=bess_soc, bess_dev=bess_dev, tcl_theta=tcl_theta,
        tcl_dev=tcl_dev, comfort_violation=comfort_steps,
        soc_violation=soc_viol_steps, violations=viol, realized_cost=cost)


def run_day(plans: list[LuPlan], cfgs: list[LuConfig],
            signal: DispatchSignal, real: Realization, grid: TimeGrid,
            prices=None) -> SimReport:
    """Simulate one realized day for the whole fleet under one DR signal."""
    if len(plans) != len(cfgs) or len(plans) != len(real.units):
        raise ValueError("plans, configs and realization must align")
    units = [
        _run_unit(plan, cfg, unit_real, signal.de_ref[h], grid)
        for h, (plan, cfg, unit_real) in
        enumerate(zip(plans, cfgs, real.units))
    ]
    delivered = sum(u.realized_kwh for u in units) \
        - sum(p.e_hat for p in plans)
    prices = prices if prices is not None else cfgs[0].prices
    spread = prices.c_flx_agt.values - prices.c_flx.values
    income = float((spread * sum(p.de_up - p.de_dn for p in plans)).sum())
    return SimReport(seed=real.seed, units=units,
                     requested_kwh=signal.de_agt_ref.copy(),
                     delivered_kwh=np.asarray(delivered),
                     agg_income=income)


def run_fleet(plans: list[LuPlan], cfgs: list[LuConfig], agg: AggregatePlan,
              dr_scenario: np.ndarray, realizations: list[Realization],
              grid: TimeGrid) -> list[SimReport]:
    """Simulate many independent days under one in-band DR scenario."""
    signal = dispatch(agg, plans, dr_scenario)   # validates the band
    return [run_day(plans, cfgs, signal, real, grid)
            for real in realizations]
