"""Scenario ingestion, fleet randomization and pipeline orchestration.

A scenario is one JSON document (schema below, unknown keys rejected) that
describes a fleet of houses sharing one parameter template, differentiated
by randomized initial battery charge, initial room temperature, temperature
set-point, required vehicle recharge and its allowed window.  Defaults
follow the reference experiment: hourly desk-scale day, one battery and one
cooling unit per house, cooling masked off between midnight-8h and 20h-24h,
import price 0.2, unit reserve price 1.0, pooled reserve price 30 EUR/kWh.

The pipeline runs planning for every unit, pools and dispatches the reserve,
simulates the requested number of Monte Carlo days and writes fixed-schema
CSVs plus a human-readable summary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .aggregator import aggregate, dispatch
from .devices import AbpParams, BessParams, FixedProfiles, PevParams, TclParams
from .intraday import realize, run_fleet
from .ludap import LuConfig, LuPlan, audit_plan, build_lu_dap, extract_plan, \
    solve_lu_dap
from .milp import read_solution_file, write_lp_file
from .timegrid import PriceSet, Profile, TimeGrid, const_profile, forecast, \
    make_time_grid, profile

HARD_TOL = 1e-6

_PRICE_DEFAULTS = {"c_imp": 0.2, "c_exp": 0.0, "c_flx": 1.0,
                   "c_flx_agt": 30.0}

_HOUSE_DEFAULTS = {
    "abp_count": 1,
    "pev_count": 1,
    "bess_count": 1,
    "tcl_count": 1,
    "p_max": 3.0,
    "p_min": 0.0,
    # phase appliance: energies/powers per phase, durations in hours
    "abp_energy": [0.11, 0.2, 0.07, 0.8],
    "abp_hours": [0.75, 0.25, 0.5, 0.5],
    "abp_p_max": [0.15, 1.6, 0.15, 1.6],
    "abp_delay_steps": 1,
    "abp_window": [8.0, 18.0],
    "pev_e_nom": 15.0,
    "pev_eta": 0.9,
    "pev_p_max": 3.3,
    "bess_e_nom": 5.0,
    "bess_eta_ch": 0.9,
    "bess_eta_dsc": 1.1,
    "bess_p_max_ch": 3.0,
    "bess_p_min_dsc": -3.0,
    "bess_soc_min": 0.1,
    "bess_soc_max": 0.9,
    "bess_cycles": 1.0,
    "tcl_resistance": 2.5,     # degC/kW
    "tcl_capacitance": 4.0,    # kWh/degC
    "tcl_eta": 2.0,
    "tcl_p_max": 2.0,
    "tcl_sigma_ex": 0.1,
    "tcl_off_hours": [[0.0, 8.0], [20.0, 24.0]],
    "pv_kw": 1.0,
    "pv_sigma_frac": 0.1,
    "ncd_base_kw": 0.3,
    "ncd_evening_kw": 0.3,
    "ncd_sigma": 0.03,
    "ext_night": 23.0,
    "ext_swing": 9.0,
    "ext_peak_hour": 14.0,
}

_RANDOM_DEFAULTS = {
    "soc0": [0.3, 0.7],
    "setpoint": [23.0, 24.5],
    "band_halfwidth": 2.0,
    "theta0_offset": [-0.5, 0.5],
    "pev_dsoc": [0.2, 0.5],
    "pev_start_hour": [19.0, 22.0],
    "pev_len_hours": [8.0, 11.0],
}

_TOP_DEFAULTS = {
    "name": "scenario",
    "H": 1,
    "T": 24,
    "dt": 1.0,
    "seed": 0,
    "r": 0.05,
    "equal_reserve": True,
    "solver": "builtin",
    "node_limit": 20000,
    "monte_carlo_runs": 20,
    "dr_fraction": 0.5,
}


class ScenarioError(ValueError):
    """Schema violation in a scenario document."""


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    H: int
    grid: TimeGrid
    seed: int
    r: float
    equal_reserve: bool
    solver: str
    node_limit: int
    monte_carlo_runs: int
    dr_fraction: float
    prices: dict
    house: dict
    randomize: dict


def _merge(section: str, given: dict, defaults: dict) -> dict:
    unknown = set(given) - set(defaults)
    if unknown:
        raise ScenarioError(
            f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")
    out = dict(defaults)
    out.update(given)
    return out


def parse_scenario(doc: dict) -> ScenarioSpec:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a JSON object")
    known = set(_TOP_DEFAULTS) | {"prices", "house", "randomize"}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(
            f"unknown top-level key(s): {', '.join(sorted(unknown))}")
    top = dict(_TOP_DEFAULTS)
    top.update({k: doc[k] for k in _TOP_DEFAULTS if k in doc})
    if not isinstance(top["H"], int) or top["H"] < 1:
        raise ScenarioError(f"H must be a positive integer, got {top['H']!r}")
    if not 0 < top["r"] < 0.5:
        raise ScenarioError(f"r must be in (0, 0.5), got {top['r']}")
    if top["monte_carlo_runs"] < 0:
        raise ScenarioError("monte_carlo_runs must be non-negative")
    if not -1.0 <= top["dr_fraction"] <= 1.0:
        raise ScenarioError("dr_fraction must lie in [-1, 1]")
    try:
        grid = make_time_grid(top["T"], top["dt"])
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return ScenarioSpec(
        name=str(top["name"]), H=top["H"], grid=grid, seed=int(top["seed"]),
        r=float(top["r"]), equal_reserve=bool(top["equal_reserve"]),
        solver=str(top["solver"]), node_limit=int(top["node_limit"]),
        monte_carlo_runs=int(top["monte_carlo_runs"]),
        dr_fraction=float(top["dr_fraction"]),
        prices=_merge("prices", doc.get("prices", {}), _PRICE_DEFAULTS),
        house=_merge("house", doc.get("house", {}), _HOUSE_DEFAULTS),
        randomize=_merge("randomize", doc.get("randomize", {}),
                         _RANDOM_DEFAULTS))


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"{path}: malformed JSON at line {exc.lineno}, "
            f"column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(doc)


# ---------------------------------------------------------------------------
# fleet generation
# ---------------------------------------------------------------------------

def _hour_mask(hours: np.ndarray, dt: float, start: float,
               end: float) -> np.ndarray:
    """Steps whose interval [h, h+dt) lies inside [start, end), wrapping
    past midnight when end <= start or end > 24."""
    length = (end - start) if end > start else (end - start) % 24.0
    start = start % 24.0
    h2 = np.where(hours < start - 1e-9, hours + 24.0, hours)
    return (h2 >= start - 1e-9) & (h2 + dt <= start + length + 1e-9)


def build_prices(spec: ScenarioSpec) -> PriceSet:
    g = spec.grid
    p = spec.prices
    return PriceSet(c_imp=const_profile(p["c_imp"], "EUR/kWh", g),
                    c_exp=const_profile(p["c_exp"], "EUR/kWh", g),
                    c_flx=const_profile(p["c_flx"], "EUR/kWh", g),
                    c_flx_agt=const_profile(p["c_flx_agt"], "EUR/kWh", g))


def _house_config(spec: ScenarioSpec, rng: np.random.Generator,
                  prices: PriceSet) -> LuConfig:
    g = spec.grid
    hours = g.hours
    h = spec.house
    rnd = spec.randomize

    abps = []
    for i in range(h["abp_count"]):
        w0, w1 = h["abp_window"]
        up = _hour_mask(hours, g.dt, w0 + i, w1)   # stagger multiple ABPs
        steps = tuple(max(1, round(hh / g.dt)) for hh in h["abp_hours"])
        abps.append(AbpParams(
            energy=tuple(h["abp_energy"]), steps=steps,
            p_max=tuple(h["abp_p_max"]),
            delay=tuple(h["abp_delay_steps"] for _ in h["abp_energy"]),
            up=tuple(up.astype(float))))

    pevs = []
    for _ in range(h["pev_count"]):
        d_soc = rng.uniform(*rnd["pev_dsoc"])
        start = rng.uniform(*rnd["pev_start_hour"])
        length = rng.uniform(*rnd["pev_len_hours"])
        up = _hour_mask(hours, g.dt, start, start + length)
        pevs.append(PevParams(e_nom=h["pev_e_nom"], eta=h["pev_eta"],
                              p_max=h["pev_p_max"], d_soc=float(d_soc),
                              up=tuple(up.astype(float))))

    besses = []
    for _ in range(h["bess_count"]):
        soc0 = float(np.clip(rng.uniform(*rnd["soc0"]),
                             h["bess_soc_min"] + 0.05,
                             h["bess_soc_max"] - 0.05))
        besses.append(BessParams(
            e_nom=h["bess_e_nom"], eta_ch=h["bess_eta_ch"],
            eta_dsc=h["bess_eta_dsc"], p_max_ch=h["bess_p_max_ch"],
            p_min_dsc=h["bess_p_min_dsc"], soc_min=h["bess_soc_min"],
            soc_max=h["bess_soc_max"], soc0=soc0, l_ch=h["bess_cycles"],
            l_dsc=h["bess_cycles"]))

    ext_mean = h["ext_night"] + h["ext_swing"] * np.exp(
        -((hours - h["ext_peak_hour"]) ** 2) / 18.0)
    tcl_up = np.ones(g.T, dtype=bool)
    for w0, w1 in h["tcl_off_hours"]:
        tcl_up &= ~_hour_mask(hours, g.dt, w0, w1)
    tcls = []
    for _ in range(h["tcl_count"]):
        setpoint = rng.uniform(*rnd["setpoint"])
        theta0 = setpoint + rng.uniform(*rnd["theta0_offset"])
        tcls.append(TclParams(
            resistance=h["tcl_resistance"], capacitance=h["tcl_capacitance"],
            eta_c=h["tcl_eta"], p_max=h["tcl_p_max"],
            theta_min=float(setpoint - rnd["band_halfwidth"]),
            theta_max=float(setpoint + rnd["band_halfwidth"]),
            theta0=float(theta0),
            ext=forecast(ext_mean, h["tcl_sigma_ex"], "degC", g),
            up=tuple(tcl_up.astype(float))))

    pv_mean = h["pv_kw"] * np.maximum(0.0, np.sin((hours - 6.0) / 12.0 * np.pi))
    res = (forecast(pv_mean, h["pv_sigma_frac"] * pv_mean, "kW", g),) \
        if h["pv_kw"] > 0 else ()
    ncd_mean = h["ncd_base_kw"] + h["ncd_evening_kw"] * np.exp(
        -((hours - 19.0) % 24.0) ** 2 / 8.0)
    fixed = FixedProfiles(
        res=res, ncd=forecast(ncd_mean, h["ncd_sigma"], "kW", g))

    return LuConfig(abps=tuple(abps), pevs=tuple(pevs), besses=tuple(besses),
                    tcls=tuple(tcls), fixed=fixed, p_min=h["p_min"],
                    p_max=h["p_max"], prices=prices, r=spec.r,
                    equal_reserve=spec.equal_reserve)


def generate_fleet(spec: ScenarioSpec) -> list[LuConfig]:
    """H randomized house configs, reproducible from the scenario seed."""
    prices = build_prices(spec)
    streams = np.random.SeedSequence(spec.seed).spawn(spec.H)
    fleet = []
    for h, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        cfg = None
        for _ in range(20):
            try:
                cand = _house_config(spec, rng, prices)
                for p in cand.abps:
                    p.validate(spec.grid)
                for p in cand.pevs:
                    p.validate(spec.grid)
                for p in cand.tcls:
                    p.validate(spec.grid, spec.r)
                cfg = cand
                break
            except ValueError:
                continue
        if cfg is None:
            raise ScenarioError(
                f"house {h}: could not draw a valid configuration in "
                f"20 attempts; check the randomization ranges")
        fleet.append(cfg)
    return fleet


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

class ExternalSolveNeeded(RuntimeError):
    """LP files written; solutions must be produced externally."""


def _solve_unit(cfg: LuConfig, spec: ScenarioSpec, h: int) -> LuPlan:
    if spec.solver == "builtin":
        return solve_lu_dap(cfg, spec.grid, node_limit=spec.node_limit)
    if spec.solver.startswith("lpfile:"):
        workdir = Path(spec.solver.split(":", 1)[1])
        workdir.mkdir(parents=True, exist_ok=True)
        prob = build_lu_dap(cfg, spec.grid)
        lp = workdir / f"lu_{h:03d}.lp"
        sol_path = workdir / f"lu_{h:03d}.sol"
        write_lp_file(prob.model, lp)
        if not sol_path.exists():
            raise ExternalSolveNeeded(
                f"wrote {lp}; solve it externally and place the variable "
                f"listing at {sol_path}, then rerun")
        sol = read_solution_file(sol_path, prob.model)
        return extract_plan(prob, sol)
    raise ScenarioError(f"unknown solver {spec.solver!r} "
                        "(expected 'builtin' or 'lpfile:<dir>')")


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating))
                              else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


@dataclass
class PipelineResult:
    spec: ScenarioSpec
    fleet: list
    plans: list
    agg: object
    signal: object
    reports: list
    hard_violations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.hard_violations


def run_pipeline(spec: ScenarioSpec, out_dir,
                 stages: str = "full") -> PipelineResult:
    """Plan, pool, dispatch and simulate; write artifacts under out_dir.

    ``stages`` is one of plan/dispatch/simulate/full; later stages imply the
    earlier ones.  Hard violations (plan audits beyond tolerance, solver
    failures) are collected and reported, not raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    order = ("plan", "dispatch", "simulate", "full")
    if stages not in order:
        raise ScenarioError(f"unknown stage {stages!r}")
    want = order.index(stages) if stages != "full" else 2

    fleet = generate_fleet(spec)
    prices = build_prices(spec)
    hard: dict[str, float] = {}

    plans = []
    for h, cfg in enumerate(fleet):
        plan = _solve_unit(cfg, spec, h)
        report = audit_plan(plan, cfg, spec.grid)
        if not report.ok(HARD_TOL):
            hard[f"lu{h}_audit"] = report.max_violation
        plans.append(plan)
        _write_csv(out / f"plan_lu{h:03d}.csv",
                   ["step", "E_hat_kWh", "dE_up_kWh", "dE_dn_kWh",
                    "E_imp_kWh", "E_exp_kWh"],
                   [(k, plan.e_hat[k], plan.de_up[k], plan.de_dn[k],
                     plan.e_imp[k], plan.e_exp[k])
                    for k in range(spec.grid.T)])

    agg = aggregate(plans, prices)
    _write_csv(out / "agg.csv",
               ["step", "E_agt", "dE_up_agt", "dE_dn_agt"],
               [(k, agg.e_agt[k], agg.de_up_agt[k], agg.de_dn_agt[k])
                for k in range(spec.grid.T)])

    signal = None
    reports = []
    if want >= 1:
        band = agg.de_up_agt if spec.dr_fraction >= 0 else agg.de_dn_agt
        dr = abs(spec.dr_fraction) * band
        signal = dispatch(agg, plans, dr)
        _write_csv(out / "dispatch.csv",
                   ["step", "lu", "dE_ref_kWh"],
                   [(k, h, signal.de_ref[h][k])
                    for h in range(len(plans))
                    for k in range(spec.grid.T)])
    if want >= 2:
        realizations = [realize(fleet, spec.grid, spec.seed * 100_003 + i)
                        for i in range(spec.monte_carlo_runs)]
        reports = run_fleet(plans, fleet, agg, signal.de_agt_ref,
                            realizations, spec.grid)
        _write_csv(out / "sim.csv",
                   ["seed", "step", "lu", "realized_kWh", "imbalance_kWh",
                    "comfort_violation", "soc_violation"],
                   [(i, k, h, u.realized_kwh[k], u.imbalance_kwh[k],
                     int(u.comfort_violation[k]), int(u.soc_violation[k]))
                    for i, rep in enumerate(reports)
                    for h, u in enumerate(rep.units)
                    for k in range(spec.grid.T)])

    result = PipelineResult(spec=spec, fleet=fleet, plans=plans, agg=agg,
                            signal=signal, reports=reports,
                            hard_violations=hard)
    _write_summary(out / "summary.txt", result)
    return result


def _write_summary(path: Path, res: PipelineResult) -> None:
    spec = res.spec
    lines = [
        f"scenario: {spec.name}",
        f"fleet: {spec.H} unit(s), T={spec.grid.T} steps of {spec.grid.dt} h",
        f"planned cost total: "
        f"{sum(p.objective_value for p in res.plans):.6f} EUR",
        f"aggregate reserve: +{res.agg.de_up_agt.sum():.6f} / "
        f"{res.agg.de_dn_agt.sum():.6f} kWh",
        f"programmed reserve income: {res.agg.income:.6f} EUR",
    ]
    if res.reports:
        gaps = [float(np.abs(r.delivery_gap).max()) for r in res.reports]
        lines.append(f"monte carlo days: {len(res.reports)}, "
                     f"max |delivered-requested|: {max(gaps):.6f} kWh")
        counts: dict[str, int] = {}
        for r in res.reports:
            for name, cnt in r.violation_counts().items():
                counts[name] = counts.get(name, 0) + cnt
        lines.append(f"violation occurrences across days: {counts or 'none'}")
    if res.hard_violations:
        worst = max(res.hard_violations.items(), key=lambda kv: kv[1])
        lines.append(f"HARD VIOLATIONS: {len(res.hard_violations)} "
                     f"(worst {worst[0]}: {worst[1]:.3e})")
    else:
        lines.append("hard violations: none")
    path.write_text("\n".join(lines) + "\n")
