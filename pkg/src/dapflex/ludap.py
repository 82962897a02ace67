"""Per-unit day-ahead planning: assemble the MILP, solve, extract, audit.

A load unit combines its device emissions into one model: net-power identity,
import/export partition, power caps that hold even under full reserve
deviation, coverage of the forecast-error band by the ``unc`` variation
budget, and a cost objective that pays for imports, earns on exports and on
the offered reserve band.

The audit (:func:`audit_plan`) re-derives every constraint family from raw
parameters and the extracted schedules -- never from the MILP rows -- so it
can serve as an independent oracle for the solver output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .devices import (AbpParams, BessParams, DeviceEmission, FixedProfiles,
                      PevParams, TclParams, bess_soc_path, emit_abp,
                      emit_bess, emit_fixed, emit_pev, emit_tcl,
                      quantile_gauss, tcl_theta_path)
from .milp import (EQ, GE, INFEASIBLE, LE, LinExpr, Model, OPTIMAL, Solution,
                   lsum, solve_lp, solve_milp)
from .timegrid import PriceSet, Profile, TimeGrid

_TOL = 1e-9


@dataclass(frozen=True)
class LuConfig:
    """One load unit: devices, grid-connection limits, prices, reliability."""

    abps: tuple = ()
    pevs: tuple = ()
    besses: tuple = ()
    tcls: tuple = ()
    fixed: FixedProfiles = FixedProfiles()
    p_min: float = 0.0           # kW, <= 0; 0 disables export
    p_max: float = 3.0           # kW, >= 0
    prices: PriceSet | None = None
    r: float = 0.05
    equal_reserve: bool = False

    def __post_init__(self):
        if self.p_min > 0 or self.p_max < 0:
            raise ValueError("need p_min <= 0 <= p_max")
        if self.prices is None:
            raise ValueError("a price set is required")


class InfeasiblePlan(RuntimeError):
    """LU-DAP has no feasible plan; carries a localized diagnostic."""

    def __init__(self, message: str, shortfall: np.ndarray | None = None):
        super().__init__(message)
        self.shortfall = shortfall


@dataclass
class LuDapProblem:
    """Built model plus the handles needed to extract a plan from a solve."""

    model: Model
    grid: TimeGrid
    cfg: LuConfig
    abp_em: list
    pev_em: list
    bess_em: list
    tcl_em: list
    fixed_em: DeviceEmission
    p_imp: np.ndarray
    p_exp: np.ndarray | None
    sigma_unc: np.ndarray
    coverage_rows: list = field(default_factory=list)


def build_lu_dap(cfg: LuConfig, grid: TimeGrid) -> LuDapProblem:
    """Assemble the full unit MILP."""
    T, dt = grid.T, grid.dt
    cfg.prices.check_grid(grid)
    model = Model("lu_dap")

    abp_em = [emit_abp(model, p, grid, f"abp{i}")
              for i, p in enumerate(cfg.abps)]
    pev_em = [emit_pev(model, p, grid, f"pev{i}")
              for i, p in enumerate(cfg.pevs)]
    bess_em = [emit_bess(model, p, grid, f"bess{i}")
               for i, p in enumerate(cfg.besses)]
    tcl_em = [emit_tcl(model, p, grid, cfg.r, f"tcl{i}")
              for i, p in enumerate(cfg.tcls)]
    fixed_em = emit_fixed(model, cfg.fixed, grid)
    reserve_em = bess_em + tcl_em
    all_em = abp_em + pev_em + reserve_em + [fixed_em]

    p_imp = np.array([model.add_var(0.0, cfg.p_max, name=f"pimp{k}")
                      for k in range(T)])
    export = cfg.p_min < 0
    p_exp = None
    x_imp = None
    if export:
        p_exp = np.array([model.add_var(cfg.p_min, 0.0, name=f"pexp{k}")
                          for k in range(T)])
        x_imp = np.array([model.add_binary(name=f"ximp{k}") for k in range(T)])

    sigma_unc = np.sqrt(fixed_em.variance)
    q = quantile_gauss(cfg.r)
    coverage_rows = []

    for k in range(T):
        p_h = lsum(em.power[k] for em in all_em)
        flx_up = lsum(em.flx_up[k] for em in reserve_em)
        flx_dn = lsum(em.flx_dn[k] for em in reserve_em)
        unc_up = lsum(em.unc_up[k] for em in reserve_em)
        unc_dn = lsum(em.unc_dn[k] for em in reserve_em)

        # base exchange partition; without export p_imp carries everything
        part = LinExpr.term(p_imp[k]) - p_h
        if export:
            part = part + LinExpr.term(p_exp[k])
            model.add_constraint(
                LinExpr.term(p_imp[k]) - LinExpr.term(x_imp[k], cfg.p_max),
                LE, 0.0, f"imp_gate{k}")
            model.add_constraint(
                LinExpr.term(p_exp[k]) + LinExpr.term(x_imp[k], cfg.p_min),
                GE, cfg.p_min, f"exp_gate{k}")
        model.add_constraint(part, EQ, 0.0, f"partition{k}")

        # connection limits must survive the full declared deviation
        model.add_constraint(p_h + flx_up + unc_up, LE, cfg.p_max,
                             f"cap_up{k}")
        model.add_constraint(p_h + flx_dn + unc_dn, GE, cfg.p_min,
                             f"cap_dn{k}")

        # forecast-error coverage with reliability r
        need = sigma_unc[k] * q
        if need > _TOL:
            coverage_rows.append(model.add_constraint(
                unc_up, GE, need, f"cover_up{k}"))
            coverage_rows.append(model.add_constraint(
                unc_dn, LE, -need, f"cover_dn{k}"))

        if cfg.equal_reserve:
            model.add_constraint(flx_up + flx_dn, EQ, 0.0, f"eq_res{k}")

    c_imp = cfg.prices.c_imp.values
    c_exp = cfg.prices.c_exp.values
    c_flx = cfg.prices.c_flx.values
    obj = LinExpr()
    for k in range(T):
        obj = obj + LinExpr.term(p_imp[k], dt * c_imp[k])
        if export:
            obj = obj - LinExpr.term(p_exp[k], dt * c_exp[k])
        for em in reserve_em:
            obj = obj - em.flx_up[k] * (dt * c_flx[k]) \
                      + em.flx_dn[k] * (dt * c_flx[k])
    model.set_objective(obj)

    return LuDapProblem(model, grid, cfg, abp_em, pev_em, bess_em, tcl_em,
                        fixed_em, p_imp, p_exp, sigma_unc, coverage_rows)


# ---------------------------------------------------------------------------
# plan extraction
# ---------------------------------------------------------------------------

@dataclass
class AbpSchedule:
    power: np.ndarray        # (n_phases, T) kW
    active: np.ndarray       # (n_phases, T) bool


@dataclass
class PevSchedule:
    power: np.ndarray        # (T,) kW
    active: np.ndarray       # (T,) bool


@dataclass
class BessSchedule:
    p_ch: np.ndarray
    p_dsc: np.ndarray
    du_ch: np.ndarray
    du_dsc: np.ndarray
    dl_ch: np.ndarray
    dl_dsc: np.ndarray
    soc: np.ndarray          # (T+1,)
    soc_up: np.ndarray
    soc_dn: np.ndarray
    flx_up: np.ndarray
    flx_dn: np.ndarray
    unc_up: np.ndarray
    unc_dn: np.ndarray


@dataclass
class TclSchedule:
    power: np.ndarray
    du: np.ndarray
    dl: np.ndarray
    theta: np.ndarray        # (T+1,)
    theta_up: np.ndarray
    theta_dn: np.ndarray
    flx_up: np.ndarray
    flx_dn: np.ndarray
    unc_up: np.ndarray
    unc_dn: np.ndarray


@dataclass
class LuPlan:
    """Optimized exchange, guaranteed reserves and all device schedules."""

    grid: TimeGrid
    e_hat: np.ndarray        # kWh per step, = e_imp + e_exp
    e_imp: np.ndarray        # kWh >= 0
    e_exp: np.ndarray        # kWh <= 0
    de_up: np.ndarray        # kWh >= 0, positive reserve
    de_dn: np.ndarray        # kWh <= 0, negative reserve
    abps: list
    pevs: list
    besses: list
    tcls: list
    fixed_power: np.ndarray  # kW, forecast net fixed consumption
    sigma_unc: np.ndarray    # kW
    objective_value: float

    @property
    def p_hat(self) -> np.ndarray:
        return self.e_hat / self.grid.dt


def _vals(sol: Solution, ids: np.ndarray) -> np.ndarray:
    return np.array([sol.value(int(v)) for v in ids.ravel()]).reshape(ids.shape)


def extract_plan(prob: LuDapProblem, sol: Solution) -> LuPlan:
    grid, dt = prob.grid, prob.grid.dt
    e_imp = _vals(sol, prob.p_imp) * dt
    e_exp = (_vals(sol, prob.p_exp) * dt if prob.p_exp is not None
             else np.zeros(grid.T))

    abps = [AbpSchedule(power=_vals(sol, em.handles["p"]),
                        active=_vals(sol, em.handles["x"]) > 0.5)
            for em in prob.abp_em]
    pevs = [PevSchedule(power=_vals(sol, em.handles["p"]),
                        active=_vals(sol, em.handles["x"]) > 0.5)
            for em in prob.pev_em]
    besses = [BessSchedule(**{k: _vals(sol, em.handles[k]) for k in
                              ("p_ch", "p_dsc", "du_ch", "du_dsc", "dl_ch",
                               "dl_dsc", "soc", "soc_up", "soc_dn", "flx_up",
                               "flx_dn", "unc_up", "unc_dn")})
              for em in prob.bess_em]
    tcls = [TclSchedule(power=_vals(sol, em.handles["p"]),
                        **{k: _vals(sol, em.handles[k]) for k in
                           ("du", "dl", "theta", "theta_up", "theta_dn",
                            "flx_up", "flx_dn", "unc_up", "unc_dn")})
            for em in prob.tcl_em]

    de_up = dt * (sum(b.flx_up for b in besses)
                  + sum(t.flx_up for t in tcls) + np.zeros(grid.T))
    de_dn = dt * (sum(b.flx_dn for b in besses)
                  + sum(t.flx_dn for t in tcls) + np.zeros(grid.T))
    return LuPlan(grid=grid, e_hat=e_imp + e_exp, e_imp=e_imp, e_exp=e_exp,
                  de_up=de_up, de_dn=de_dn, abps=abps, pevs=pevs,
                  besses=besses, tcls=tcls,
                  fixed_power=prob.cfg.fixed.net_power(grid),
                  sigma_unc=prob.sigma_unc,
                  objective_value=sol.objective_value)


def _coverage_diagnostic(prob: LuDapProblem) -> np.ndarray | None:
    """Shortfall (kW) per coverage row, via an elastic LP relaxation."""
    if not prob.coverage_rows:
        return None
    model = prob.model
    elastic = []
    saved_obj = model.objective
    try:
        obj = LinExpr()
        for row in prob.coverage_rows:
            con = model.constraints[row]
            e = model.add_var(0.0, np.inf, name=f"elastic{row}")
            sign = 1.0 if con.relation == GE else -1.0
            con.expr = con.expr + LinExpr.term(e, sign)
            elastic.append((row, e))
            obj = obj + LinExpr.term(e)
        model.set_objective(obj)
        sol = solve_lp(model)
        if not sol.optimal:
            return None
        return np.array([sol.value(e) for _, e in elastic])
    finally:
        for row, e in elastic:
            con = model.constraints[row]
            con.expr = LinExpr({v: c for v, c in con.expr.terms.items()
                                if v != e})
            model.fix_var(e, 0.0)
        model.objective = saved_obj


def solve_lu_dap(cfg: LuConfig, grid: TimeGrid, node_limit: int = 200_000,
                 prob: LuDapProblem | None = None) -> LuPlan:
    """Build (unless given) and solve the unit problem with the builtin
    solver; raises :class:`InfeasiblePlan` with a per-step diagnostic when no
    plan exists."""
    if prob is None:
        prob = build_lu_dap(cfg, grid)
    sol = solve_milp(prob.model, node_limit=node_limit, max_binaries=None)
    if sol.status == INFEASIBLE:
        short = _coverage_diagnostic(prob)
        if short is not None and short.max(initial=0.0) > 1e-7:
            steps = sorted({prob.coverage_rows[i] for i in
                            np.flatnonzero(short > 1e-7)})
            names = [prob.model.constraints[r].name for r in steps]
            raise InfeasiblePlan(
                "unit cannot cover its forecast-error band; short rows: "
                + ", ".join(f"{n} ({s:.3f} kW)" for n, s in
                            zip(names, short[short > 1e-7])),
                shortfall=short)
        raise InfeasiblePlan("unit plan infeasible (device constraints)")
    if sol.status != OPTIMAL:
        raise InfeasiblePlan(f"solver stopped with status {sol.status}")
    return extract_plan(prob, sol)


# ---------------------------------------------------------------------------
# independent audit
# ---------------------------------------------------------------------------

@dataclass
class AuditReport:
    """Max violation per constraint family, recomputed from raw parameters."""

    violations: dict

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    def ok(self, tol: float = 1e-6) -> bool:
        return self.max_violation <= tol

    def worst(self) -> str:
        if not self.violations:
            return "empty"
        name = max(self.violations, key=self.violations.get)
        return f"{name}: {self.violations[name]:.3e}"


def _contiguity_gap(active: np.ndarray) -> float:
    """0 if the active steps form one contiguous block, else 1."""
    idx = np.flatnonzero(active)
    if idx.size <= 1:
        return 0.0
    return 0.0 if idx[-1] - idx[0] + 1 == idx.size else 1.0


def audit_plan(plan: LuPlan, cfg: LuConfig, grid: TimeGrid) -> AuditReport:
    T, dt = grid.T, grid.dt
    v: dict[str, float] = {}

    def bump(key, amount):
        v[key] = max(v.get(key, 0.0), float(amount))

    for p, sched in zip(cfg.abps, plan.abps):
        up = p.validate(grid)
        for j in range(p.n_phases):
            pw = sched.power[j]
            act = sched.active[j]
            bump("abp_energy", abs(pw.sum() * dt - p.energy[j]))
            bump("abp_duration", abs(act.sum() - p.steps[j]))
            bump("abp_contiguity", _contiguity_gap(act))
            bump("abp_window", np.maximum(act & ~up, 0).max(initial=0))
            bump("abp_power", np.maximum(pw - act * p.p_max[j], 0).max())
            bump("abp_power", np.maximum(act * p.p_min[j] - pw, 0).max())
            if j >= 1:
                prev = np.flatnonzero(sched.active[j - 1])
                cur = np.flatnonzero(act)
                if prev.size and cur.size:
                    bump("abp_order", max(0, prev[-1] + 1 - cur[0]))
                    bump("abp_delay", max(0, cur[0] - prev[-1] - 1
                                          - p.delay[j]))

    for p, sched in zip(cfg.pevs, plan.pevs):
        up = p.validate(grid)
        bump("pev_energy", abs(sched.power.sum() * dt - p.energy_need))
        bump("pev_power", np.maximum(sched.power - p.p_max, 0).max(initial=0))
        bump("pev_power", np.maximum(-sched.power, 0).max(initial=0))
        bump("pev_window", np.maximum(sched.power[~up], 0).max(initial=0))

    for p, b in zip(cfg.besses, plan.besses):
        # replay all three trajectories from the raw recursion
        for soc_ref, ch_extra, dsc_extra, key in (
                (b.soc, 0, 0, "bess_soc_recursion"),
                (b.soc_up, b.du_ch, b.du_dsc, "bess_socu_recursion"),
                (b.soc_dn, b.dl_ch, b.dl_dsc, "bess_socd_recursion")):
            path = bess_soc_path(p, b.p_ch + ch_extra, b.p_dsc + dsc_extra, dt)
            bump(key, np.abs(path - soc_ref).max())
        bump("bess_soc_bounds", max(
            np.maximum(b.soc_up[1:] - p.soc_max, 0).max(),
            np.maximum(p.soc_min - b.soc_dn[1:], 0).max()))
        bump("bess_base_soc", max(
            np.maximum(b.soc[1:] - p.soc_max, 0).max(),
            np.maximum(p.soc_min - b.soc[1:], 0).max()))
        bump("bess_exclusive",
             np.minimum(np.maximum(b.p_ch, 0), np.maximum(-b.p_dsc, 0)).max())
        for ch, dsc, key in ((b.p_ch, b.p_dsc, "bess_power"),
                             (b.p_ch + b.du_ch, b.p_dsc + b.du_dsc,
                              "bess_power"),
                             (b.p_ch + b.dl_ch, b.p_dsc + b.dl_dsc,
                              "bess_power")):
            bump(key, np.maximum(ch - p.p_max_ch, 0).max())
            bump(key, np.maximum(-ch, 0).max())
            bump(key, np.maximum(p.p_min_dsc - dsc, 0).max())
            bump(key, np.maximum(dsc, 0).max())
        bump("bess_cycle",
             (p.eta_ch * dt / p.e_nom) * (b.p_ch + b.du_ch).sum() - p.l_ch)
        bump("bess_cycle",
             (-p.eta_dsc * dt / p.e_nom) * (b.p_dsc + b.dl_dsc).sum()
             - p.l_dsc)
        bump("bess_split", np.abs(b.flx_up + b.unc_up
                                  - (b.du_ch + b.du_dsc)).max())
        bump("bess_split", np.abs(b.flx_dn + b.unc_dn
                                  - (b.dl_ch + b.dl_dsc)).max())

    q = quantile_gauss(cfg.r)
    for p, t in zip(cfg.tcls, plan.tcls):
        up = p.validate(grid, cfg.r)
        ext = p.ext.mean.values
        margin = p.ext.sigma.values * q
        for ref, extra, key in ((t.theta, 0, "tcl_recursion"),
                                (t.theta_up, t.dl, "tcl_recursion"),
                                (t.theta_dn, t.du, "tcl_recursion")):
            path = tcl_theta_path(p, t.power + extra, ext, dt)
            bump(key, np.abs(path - ref).max())
        bump("tcl_comfort", np.maximum(
            t.theta_up[1:] - (p.theta_max - margin), 0).max())
        bump("tcl_comfort", np.maximum(
            (p.theta_min + margin) - t.theta_dn[1:], 0).max())
        for pw in (t.power, t.power + t.du, t.power + t.dl):
            bump("tcl_power", np.maximum(pw - up * p.p_max, 0).max())
            bump("tcl_power", np.maximum(-pw, 0).max())

    # unit-level identities
    device_p = plan.fixed_power.copy()
    for sched in plan.abps:
        device_p = device_p + sched.power.sum(axis=0)
    for sched in plan.pevs:
        device_p = device_p + sched.power
    for b in plan.besses:
        device_p = device_p + b.p_ch + b.p_dsc
    for t in plan.tcls:
        device_p = device_p + t.power
    bump("lu_power_identity", np.abs(plan.e_hat - dt * device_p).max())
    bump("lu_partition", np.maximum(-plan.e_imp, 0).max())
    bump("lu_partition", np.maximum(plan.e_exp, 0).max())
    bump("lu_partition", np.abs(plan.e_hat - plan.e_imp - plan.e_exp).max())

    flx_up = plan.de_up / dt
    flx_dn = plan.de_dn / dt
    unc_up = (sum(b.unc_up for b in plan.besses)
              + sum(t.unc_up for t in plan.tcls) + np.zeros(T))
    unc_dn = (sum(b.unc_dn for b in plan.besses)
              + sum(t.unc_dn for t in plan.tcls) + np.zeros(T))
    bump("lu_caps", np.maximum(
        device_p + flx_up + unc_up - cfg.p_max, 0).max())
    bump("lu_caps", np.maximum(
        cfg.p_min - (device_p + flx_dn + unc_dn), 0).max())
    need = plan.sigma_unc * q
    bump("lu_unc_coverage", np.maximum(need - unc_up, 0).max())
    bump("lu_unc_coverage", np.maximum(unc_dn + need, 0).max())
    bump("lu_reserve_sign", np.maximum(-plan.de_up, 0).max())
    bump("lu_reserve_sign", np.maximum(plan.de_dn, 0).max())
    if cfg.equal_reserve:
        bump("lu_equal_reserve", np.abs(plan.de_up + plan.de_dn).max())

    c = cfg.prices
    cost = float((c.c_imp.values * plan.e_imp
                  - c.c_exp.values * plan.e_exp
                  - c.c_flx.values * (plan.de_up - plan.de_dn)).sum())
    bump("lu_objective", abs(cost - plan.objective_value))
    return AuditReport(v)
