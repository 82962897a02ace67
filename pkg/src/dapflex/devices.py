"""Device models: each emitter translates one appliance class into MILP
variables/constraints and reports its contribution to the unit's net power
and to the reserve capability.

Conventions shared by all emitters (load convention, kW):

* positive power = consumption, negative = injection;
* a *positive* power variation (``flx_up``/``unc_up`` terms) means the unit
  can consume **more** than planned at that step, a negative variation
  (``flx_dn``/``unc_dn``) that it can consume less / inject more;
* phase appliances and vehicle charging offer time flexibility only -- their
  reserve terms are identically zero.  Batteries and cooling units carry
  explicit variation variables, split into a paid-reserve part (``flx``) and
  a forecast-error-compensation part (``unc``); the optimizer decides the
  split.

Reserve feasibility is guaranteed structurally: next to the planned battery
state of charge (and room temperature) the emitters build the *over*- and
*under*-trajectories that would result from applying the full positive or
negative variation at every step, and constrain those to the physical
limits.  Note the cross coupling for cooling: applying extra power drives the
temperature to its lower trajectory and vice versa.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .milp import BINARY, EQ, GE, LE, LinExpr, Model, lsum
from .timegrid import Forecast, Profile, TimeGrid

_TOL = 1e-9


def quantile_gauss(r: float) -> float:
    """Standard-normal quantile sqrt(2)*erfinv(1-2r) for reliability r.

    Bisection on ``math.erf``; accurate to well below 1e-9 over the whole
    admissible range 0 < r < 0.5.
    """
    if not 0.0 < r < 0.5:
        raise ValueError(f"reliability must satisfy 0 < r < 0.5, got {r}")
    y = 1.0 - 2.0 * r
    lo, hi = 0.0, 9.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if math.erf(mid) < y:
            lo = mid
        else:
            hi = mid
    return math.sqrt(2.0) * 0.5 * (lo + hi)


def _up_mask(up, T: int) -> np.ndarray:
    arr = np.asarray(up, dtype=float)
    if arr.shape != (T,):
        raise ValueError(f"UP mask must have length {T}, got {arr.shape}")
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("UP mask entries must be 0 or 1")
    return arr.astype(bool)


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AbpParams:
    """Appliance running ordered, uninterruptible phases (dishwasher etc.).

    ``energy[j]`` kWh must be delivered in exactly ``steps[j]`` consecutive
    steps at power within [p_min[j], p_max[j]]; phase j may start at most
    ``delay[j]`` steps after phase j-1 ends (delay[0] is ignored).  ``up``
    masks the steps in which the user allows the appliance to run.
    """

    energy: tuple
    steps: tuple
    p_max: tuple
    p_min: tuple = ()
    delay: tuple = ()
    up: tuple = ()

    def __post_init__(self):
        n = len(self.energy)
        if n == 0:
            raise ValueError("an ABP needs at least one phase")
        object.__setattr__(self, "energy", tuple(float(e) for e in self.energy))
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))
        object.__setattr__(self, "p_max", tuple(float(p) for p in self.p_max))
        pmin = self.p_min or tuple(0.0 for _ in range(n))
        object.__setattr__(self, "p_min", tuple(float(p) for p in pmin))
        delay = self.delay or tuple(0 for _ in range(n))
        object.__setattr__(self, "delay", tuple(int(d) for d in delay))
        if not (len(self.steps) == len(self.p_max) == len(self.p_min)
                == len(self.delay) == n):
            raise ValueError("phase parameter arrays must share one length")
        if any(s < 1 for s in self.steps):
            raise ValueError("every phase needs at least one step")
        if any(e < 0 for e in self.energy):
            raise ValueError("phase energies must be non-negative")
        if any(d < 0 for d in self.delay):
            raise ValueError("phase delays must be non-negative")
        for j in range(n):
            if not 0 <= self.p_min[j] <= self.p_max[j]:
                raise ValueError(f"phase {j}: need 0 <= p_min <= p_max")

    @property
    def n_phases(self) -> int:
        return len(self.energy)

    def validate(self, grid: TimeGrid) -> np.ndarray:
        """Grid-dependent structural checks; returns the UP mask."""
        up = _up_mask(self.up if len(self.up) else np.ones(grid.T), grid.T)
        for j in range(self.n_phases):
            cap = self.p_max[j] * self.steps[j] * grid.dt
            floor = self.p_min[j] * self.steps[j] * grid.dt
            if self.energy[j] > cap + _TOL or self.energy[j] < floor - _TOL:
                raise ValueError(
                    f"phase {j} energy {self.energy[j]} kWh outside the "
                    f"deliverable range [{floor}, {cap}] kWh")
        if sum(self.steps) > int(up.sum()):
            raise ValueError(
                f"phases need {sum(self.steps)} allowed steps, UP mask has "
                f"only {int(up.sum())}")
        return up


@dataclass(frozen=True)
class PevParams:
    """Plug-in vehicle recharge: fixed energy target within allowed steps."""

    e_nom: float
    eta: float
    p_max: float
    d_soc: float
    up: tuple = ()

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("recharge efficiency must be in (0, 1]")
        if not 0 <= self.d_soc <= 1:
            raise ValueError("required recharge fraction must be in [0, 1]")
        if self.e_nom <= 0 or self.p_max < 0:
            raise ValueError("e_nom must be positive and p_max non-negative")

    @property
    def energy_need(self) -> float:
        """Grid-side energy to deliver: d_soc*e_nom/eta [kWh]."""
        return self.d_soc * self.e_nom / self.eta

    def validate(self, grid: TimeGrid) -> np.ndarray:
        up = _up_mask(self.up if len(self.up) else np.ones(grid.T), grid.T)
        deliverable = self.p_max * grid.dt * int(up.sum())
        if self.energy_need > deliverable + _TOL:
            raise ValueError(
                f"recharge target {self.energy_need:.3f} kWh exceeds the "
                f"{deliverable:.3f} kWh deliverable in the allowed window")
        return up


@dataclass(frozen=True)
class BessParams:
    """Battery storage with asymmetric efficiencies and daily cycle caps."""

    e_nom: float
    eta_ch: float
    eta_dsc: float
    p_max_ch: float
    p_min_dsc: float
    soc_min: float
    soc_max: float
    soc0: float
    l_ch: float = 1.0
    l_dsc: float = 1.0

    def __post_init__(self):
        if self.e_nom <= 0:
            raise ValueError("battery nominal energy must be positive")
        if not 0 < self.eta_ch <= 1:
            raise ValueError("charging efficiency must be in (0, 1]")
        if self.eta_dsc < 1:
            raise ValueError("discharging efficiency must be >= 1")
        if self.p_max_ch < 0 or self.p_min_dsc > 0:
            raise ValueError("need p_min_dsc <= 0 <= p_max_ch")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if not self.soc_min <= self.soc0 <= self.soc_max:
            raise ValueError("initial SoC must lie within [soc_min, soc_max]")
        if self.l_ch < 0 or self.l_dsc < 0:
            raise ValueError("cycle caps must be non-negative")

    @property
    def p_span(self) -> float:
        return self.p_max_ch - self.p_min_dsc


@dataclass(frozen=True)
class TclParams:
    """Cooling unit on a first-order RC thermal model."""

    resistance: float        # degC/kW
    capacitance: float       # kWh/degC
    eta_c: float
    p_max: float
    theta_min: float
    theta_max: float
    theta0: float
    ext: Forecast            # external temperature forecast, degC
    up: tuple = ()

    def __post_init__(self):
        if min(self.resistance, self.capacitance, self.eta_c, self.p_max) <= 0:
            raise ValueError("R, C, eta_c and p_max must all be positive")
        if not self.theta_min < self.theta_max:
            raise ValueError("comfort band must have theta_min < theta_max")

    def alpha(self, grid: TimeGrid) -> float:
        return math.exp(-grid.dt / (self.capacitance * self.resistance))

    def beta(self, grid: TimeGrid) -> float:
        return 1.0 - self.alpha(grid)

    def validate(self, grid: TimeGrid, r: float) -> np.ndarray:
        up = _up_mask(self.up if len(self.up) else np.ones(grid.T), grid.T)
        self.ext.check_grid(grid)
        q = quantile_gauss(r)
        margin = self.ext.sigma.values * q
        band = self.theta_max - self.theta_min - 2 * margin
        if np.any(band < -_TOL):
            k = int(np.argmax(-band))
            raise ValueError(
                f"comfort band narrower than the 2*sigma*q({r}) tightening "
                f"at step {k}: band {self.theta_max - self.theta_min}, "
                f"tightening {2 * margin[k]:.4f}")
        return up


@dataclass(frozen=True)
class FixedProfiles:
    """Non-dispatchable part of a unit: generation, fixed plans, base load."""

    res: tuple = ()          # Forecast (kW, generation, positive means output)
    upd: tuple = ()          # Profile (kW, user-fixed plans)
    ncd: Forecast | None = None

    def __post_init__(self):
        for f in self.res:
            if np.any(f.mean.values < 0):
                raise ValueError("RES generation means must be non-negative")
        for p in self.upd:
            if np.any(p.values < 0):
                raise ValueError("fixed-plan profiles must be non-negative")

    def net_power(self, grid: TimeGrid) -> np.ndarray:
        """Forecast net fixed consumption: -sum(res) + sum(upd) + ncd."""
        out = np.zeros(grid.T)
        for f in self.res:
            out -= f.check_grid(grid).mean.values
        for p in self.upd:
            out += p.check_grid(grid).values
        if self.ncd is not None:
            out += self.ncd.check_grid(grid).mean.values
        return out

    def variance(self, grid: TimeGrid) -> np.ndarray:
        """Per-step forecast-error variance (independent Gaussian sources)."""
        out = np.zeros(grid.T)
        for f in self.res:
            out += f.sigma.values ** 2
        if self.ncd is not None:
            out += self.ncd.sigma.values ** 2
        return out


# ---------------------------------------------------------------------------
# emissions
# ---------------------------------------------------------------------------

def _zeros(T: int) -> list[LinExpr]:
    return [LinExpr() for _ in range(T)]


@dataclass
class DeviceEmission:
    """What one device contributes to the unit-level assembly."""

    power: list            # per-step LinExpr, kW, into the unit's net power
    flx_up: list           # per-step LinExpr >= 0, paid positive reserve
    flx_dn: list           # per-step LinExpr <= 0, paid negative reserve
    unc_up: list           # per-step LinExpr >= 0, error-compensation headroom
    unc_dn: list           # per-step LinExpr <= 0
    handles: dict = field(default_factory=dict)
    variance: np.ndarray | None = None


def _abp_phase_windows(p: AbpParams, up: np.ndarray) -> list[tuple[int, int]]:
    """Earliest/latest start step of every phase.

    Pure implication of duration, ordering, delay caps and the user mask;
    fixing activations outside these windows shrinks the search space a lot
    without excluding any feasible schedule.
    """
    T = len(up)
    n = p.n_phases
    # steps where a whole phase block fits inside the user mask
    starts = []
    for j in range(n):
        L = p.steps[j]
        fit = [k for k in range(T - L + 1) if up[k:k + L].all()]
        if not fit:
            raise ValueError(f"phase {j} ({L} steps) does not fit the UP mask")
        starts.append(fit)

    earliest = [0] * n
    earliest[0] = starts[0][0]
    for j in range(1, n):
        prev_end = earliest[j - 1] + p.steps[j - 1] - 1
        ok = [k for k in starts[j] if k >= prev_end + 1]
        if not ok:
            raise ValueError(f"phase {j} cannot start after phase {j - 1}")
        earliest[j] = ok[0]
    latest = [0] * n
    latest[n - 1] = starts[n - 1][-1]
    for j in range(n - 2, -1, -1):
        ok = [k for k in starts[j]
              if k + p.steps[j] - 1 <= latest[j + 1] - 1]
        if not ok:
            raise ValueError(f"phase {j} cannot finish before phase {j + 1}")
        latest[j] = ok[-1]
    # forward refinement: delay caps bound how late a phase may follow
    for j in range(1, n):
        cap = latest[j - 1] + p.steps[j - 1] - 1 + 1 + p.delay[j]
        ok = [k for k in starts[j] if earliest[j] <= k <= min(latest[j], cap)]
        if not ok:
            raise ValueError(f"phase {j} delay cap of {p.delay[j]} steps "
                             f"leaves no feasible start")
        latest[j] = ok[-1]
    for j in range(n):
        if earliest[j] > latest[j]:
            raise ValueError(f"phase {j} has an empty start window")
    return list(zip(earliest, latest))


def emit_abp(model: Model, p: AbpParams, grid: TimeGrid,
             tag: str = "abp") -> DeviceEmission:
    """Phase-appliance constraints: per-phase energy/duration, contiguity,
    ordering, bounded inter-phase gaps, user window."""
    T, dt = grid.T, grid.dt
    up = p.validate(grid)
    n = p.n_phases
    windows = _abp_phase_windows(p, up)

    pw = np.empty((n, T), dtype=int)
    x = np.empty((n, T), dtype=int)
    s = np.empty((n, T), dtype=int)
    t = np.full((n, T), -1, dtype=int)
    for j in range(n):
        lo_k, hi_k = windows[j]
        first_active, last_active = lo_k, hi_k + p.steps[j] - 1
        for k in range(T):
            allowed = up[k] and first_active <= k <= last_active
            pw[j, k] = model.add_var(0.0, p.p_max[j] if allowed else 0.0,
                                     name=f"{tag}_p{j}_{k}")
            x[j, k] = model.add_binary(name=f"{tag}_x{j}_{k}",
                                       fixed=None if allowed else 0.0)
            # the phase is certainly not done before its earliest end and
            # certainly done after its latest end
            s_fix = None
            if k <= lo_k + p.steps[j] - 1:
                s_fix = 0.0
            elif k > last_active:
                s_fix = 1.0
            s[j, k] = model.add_binary(name=f"{tag}_s{j}_{k}", fixed=s_fix)
            if j >= 1:
                t[j, k] = model.add_binary(name=f"{tag}_t{j}_{k}")

    for j in range(n):
        model.add_constraint(
            lsum(LinExpr.term(pw[j, k], dt) for k in range(T)), EQ,
            p.energy[j], f"{tag}_energy{j}")
        model.add_constraint(
            lsum(LinExpr.term(x[j, k]) for k in range(T)), EQ,
            float(p.steps[j]), f"{tag}_steps{j}")
        for k in range(T):
            if up[k]:
                model.add_constraint(
                    LinExpr.term(pw[j, k]) - LinExpr.term(x[j, k], p.p_max[j]),
                    LE, 0.0, f"{tag}_pmax{j}_{k}")
                if p.p_min[j] > 0:
                    model.add_constraint(
                        LinExpr.term(pw[j, k])
                        - LinExpr.term(x[j, k], p.p_min[j]),
                        GE, 0.0, f"{tag}_pmin{j}_{k}")
                # a finished phase cannot be active again
                model.add_constraint(
                    LinExpr.term(x[j, k]) + LinExpr.term(s[j, k]), LE, 1.0,
                    f"{tag}_xs{j}_{k}")
            if k >= 1:
                if up[k - 1]:
                    # deactivation marks the phase as executed: no interruption
                    model.add_constraint(
                        LinExpr.term(x[j, k - 1]) - LinExpr.term(x[j, k])
                        - LinExpr.term(s[j, k]), LE, 0.0,
                        f"{tag}_fin{j}_{k}")
                model.add_constraint(
                    LinExpr.term(s[j, k - 1]) - LinExpr.term(s[j, k]), LE,
                    0.0, f"{tag}_smono{j}_{k}")
            if j >= 1:
                if up[k]:
                    model.add_constraint(
                        LinExpr.term(x[j, k]) - LinExpr.term(s[j - 1, k]), LE,
                        0.0, f"{tag}_order{j}_{k}")
                # t flags the idle gap between phase j-1 and phase j
                model.add_constraint(
                    LinExpr.term(t[j, k]) - LinExpr.term(s[j - 1, k])
                    + LinExpr.term(x[j, k]) + LinExpr.term(s[j, k]), EQ, 0.0,
                    f"{tag}_gap{j}_{k}")
        if j >= 1:
            model.add_constraint(
                lsum(LinExpr.term(t[j, k]) for k in range(T)), LE,
                float(p.delay[j]), f"{tag}_delay{j}")

    power = [lsum(LinExpr.term(pw[j, k]) for j in range(n)) for k in range(T)]
    return DeviceEmission(power, _zeros(T), _zeros(T), _zeros(T), _zeros(T),
                          handles={"p": pw, "x": x, "s": s, "t": t})


def emit_pev(model: Model, p: PevParams, grid: TimeGrid,
             tag: str = "pev") -> DeviceEmission:
    """Vehicle recharge: energy target, power gate, user window."""
    T, dt = grid.T, grid.dt
    up = p.validate(grid)
    pw = np.empty(T, dtype=int)
    x = np.empty(T, dtype=int)
    for k in range(T):
        allowed = up[k]
        pw[k] = model.add_var(0.0, p.p_max if allowed else 0.0,
                              name=f"{tag}_p{k}")
        x[k] = model.add_binary(name=f"{tag}_x{k}",
                                fixed=None if allowed else 0.0)
        if allowed:
            model.add_constraint(
                LinExpr.term(pw[k]) - LinExpr.term(x[k], p.p_max), LE, 0.0,
                f"{tag}_pmax{k}")
    model.add_constraint(
        lsum(LinExpr.term(pw[k], dt * p.eta) for k in range(T)), EQ,
        p.d_soc * p.e_nom, f"{tag}_energy")
    power = [LinExpr.term(pw[k]) for k in range(T)]
    return DeviceEmission(power, _zeros(T), _zeros(T), _zeros(T), _zeros(T),
                          handles={"p": pw, "x": x})


def emit_bess(model: Model, p: BessParams, grid: TimeGrid,
              tag: str = "bess") -> DeviceEmission:
    """Battery: base charge/discharge plan plus reserve variation variables
    with their own over/under SoC trajectories, SoC limits and cycle caps."""
    T, dt = grid.T, grid.dt
    k_e = dt / p.e_nom

    p_ch = np.array([model.add_var(0.0, p.p_max_ch, name=f"{tag}_pch{k}")
                     for k in range(T)])
    p_dsc = np.array([model.add_var(p.p_min_dsc, 0.0, name=f"{tag}_pdsc{k}")
                      for k in range(T)])
    x_ch = np.array([model.add_binary(name=f"{tag}_xch{k}") for k in range(T)])
    x_dsc = np.array([model.add_binary(name=f"{tag}_xdsc{k}")
                      for k in range(T)])
    # variation variables: du_* raise consumption, dl_* lower it
    du_ch = np.array([model.add_var(0.0, p.p_max_ch, name=f"{tag}_duch{k}")
                      for k in range(T)])
    du_dsc = np.array([model.add_var(0.0, -p.p_min_dsc, name=f"{tag}_dudsc{k}")
                       for k in range(T)])
    dl_ch = np.array([model.add_var(-p.p_max_ch, 0.0, name=f"{tag}_dlch{k}")
                      for k in range(T)])
    dl_dsc = np.array([model.add_var(p.p_min_dsc, 0.0, name=f"{tag}_dldsc{k}")
                       for k in range(T)])
    xu_ch = np.array([model.add_binary(name=f"{tag}_xuch{k}")
                      for k in range(T)])
    xu_dsc = np.array([model.add_binary(name=f"{tag}_xudsc{k}")
                       for k in range(T)])
    xl_ch = np.array([model.add_binary(name=f"{tag}_xlch{k}")
                      for k in range(T)])
    xl_dsc = np.array([model.add_binary(name=f"{tag}_xldsc{k}")
                       for k in range(T)])
    # SoC limits enter as variable bounds on the over/under trajectories
    soc = np.array([model.add_var(p.soc0 if k == 0 else 0.0,
                                  p.soc0 if k == 0 else 1.0,
                                  name=f"{tag}_soc{k}") for k in range(T + 1)])
    soc_up = np.array([model.add_var(p.soc0 if k == 0 else 0.0,
                                     p.soc0 if k == 0 else p.soc_max,
                                     name=f"{tag}_socu{k}")
                       for k in range(T + 1)])
    soc_dn = np.array([model.add_var(p.soc0 if k == 0 else p.soc_min,
                                     p.soc0 if k == 0 else 1.0,
                                     name=f"{tag}_socd{k}")
                       for k in range(T + 1)])
    # paid-reserve vs error-compensation split of each variation
    flx_up = np.array([model.add_var(0.0, p.p_span, name=f"{tag}_fu{k}")
                       for k in range(T)])
    unc_up = np.array([model.add_var(0.0, p.p_span, name=f"{tag}_uu{k}")
                       for k in range(T)])
    flx_dn = np.array([model.add_var(-p.p_span, 0.0, name=f"{tag}_fd{k}")
                       for k in range(T)])
    unc_dn = np.array([model.add_var(-p.p_span, 0.0, name=f"{tag}_ud{k}")
                       for k in range(T)])

    for k in range(T):
        # the three coupled SoC recursions
        model.add_constraint(
            LinExpr.term(soc[k + 1]) - LinExpr.term(soc[k])
            - LinExpr.term(p_ch[k], k_e * p.eta_ch)
            - LinExpr.term(p_dsc[k], k_e * p.eta_dsc),
            EQ, 0.0, f"{tag}_soc{k}")
        model.add_constraint(
            LinExpr.term(soc_up[k + 1]) - LinExpr.term(soc_up[k])
            - (LinExpr.term(p_ch[k]) + LinExpr.term(du_ch[k])) * (k_e * p.eta_ch)
            - (LinExpr.term(p_dsc[k]) + LinExpr.term(du_dsc[k])) * (k_e * p.eta_dsc),
            EQ, 0.0, f"{tag}_socu{k}")
        model.add_constraint(
            LinExpr.term(soc_dn[k + 1]) - LinExpr.term(soc_dn[k])
            - (LinExpr.term(p_ch[k]) + LinExpr.term(dl_ch[k])) * (k_e * p.eta_ch)
            - (LinExpr.term(p_dsc[k]) + LinExpr.term(dl_dsc[k])) * (k_e * p.eta_dsc),
            EQ, 0.0, f"{tag}_socd{k}")
        # base plan: gated powers, one task at a time
        model.add_constraint(
            LinExpr.term(p_ch[k]) - LinExpr.term(x_ch[k], p.p_max_ch), LE,
            0.0, f"{tag}_chgate{k}")
        model.add_constraint(
            LinExpr.term(p_dsc[k]) - LinExpr.term(x_dsc[k], p.p_min_dsc), GE,
            0.0, f"{tag}_dscgate{k}")
        model.add_constraint(
            LinExpr.term(x_ch[k]) + LinExpr.term(x_dsc[k]), LE, 1.0,
            f"{tag}_xor{k}")
        # full-positive-variation trajectory obeys the same gates
        model.add_constraint(
            LinExpr.term(p_ch[k]) + LinExpr.term(du_ch[k])
            - LinExpr.term(xu_ch[k], p.p_max_ch), LE, 0.0, f"{tag}_uchg{k}")
        model.add_constraint(
            LinExpr.term(p_dsc[k]) + LinExpr.term(du_dsc[k]), LE, 0.0,
            f"{tag}_udsc0{k}")
        model.add_constraint(
            LinExpr.term(p_dsc[k]) + LinExpr.term(du_dsc[k])
            - LinExpr.term(xu_dsc[k], p.p_min_dsc), GE, 0.0, f"{tag}_udscg{k}")
        model.add_constraint(
            LinExpr.term(xu_ch[k]) + LinExpr.term(xu_dsc[k]), LE, 1.0,
            f"{tag}_uxor{k}")
        # and the full-negative-variation trajectory
        model.add_constraint(
            LinExpr.term(p_ch[k]) + LinExpr.term(dl_ch[k]), GE, 0.0,
            f"{tag}_lch0{k}")
        model.add_constraint(
            LinExpr.term(p_ch[k]) + LinExpr.term(dl_ch[k])
            - LinExpr.term(xl_ch[k], p.p_max_ch), LE, 0.0, f"{tag}_lchg{k}")
        model.add_constraint(
            LinExpr.term(p_dsc[k]) + LinExpr.term(dl_dsc[k])
            - LinExpr.term(xl_dsc[k], p.p_min_dsc), GE, 0.0, f"{tag}_ldscg{k}")
        model.add_constraint(
            LinExpr.term(xl_ch[k]) + LinExpr.term(xl_dsc[k]), LE, 1.0,
            f"{tag}_lxor{k}")
        # variation = paid reserve + compensation headroom
        model.add_constraint(
            LinExpr.term(flx_up[k]) + LinExpr.term(unc_up[k])
            - LinExpr.term(du_ch[k]) - LinExpr.term(du_dsc[k]), EQ, 0.0,
            f"{tag}_usplit{k}")
        model.add_constraint(
            LinExpr.term(flx_dn[k]) + LinExpr.term(unc_dn[k])
            - LinExpr.term(dl_ch[k]) - LinExpr.term(dl_dsc[k]), EQ, 0.0,
            f"{tag}_lsplit{k}")

    # daily cycle caps count the worst-case (fully deviated) throughput
    model.add_constraint(
        lsum((LinExpr.term(p_ch[k]) + LinExpr.term(du_ch[k]))
             * (p.eta_ch * k_e) for k in range(T)),
        LE, p.l_ch, f"{tag}_cycles_ch")
    model.add_constraint(
        lsum((LinExpr.term(p_dsc[k]) + LinExpr.term(dl_dsc[k]))
             * (-p.eta_dsc * k_e) for k in range(T)),
        LE, p.l_dsc, f"{tag}_cycles_dsc")

    power = [LinExpr.term(p_ch[k]) + LinExpr.term(p_dsc[k]) for k in range(T)]
    return DeviceEmission(
        power,
        [LinExpr.term(flx_up[k]) for k in range(T)],
        [LinExpr.term(flx_dn[k]) for k in range(T)],
        [LinExpr.term(unc_up[k]) for k in range(T)],
        [LinExpr.term(unc_dn[k]) for k in range(T)],
        handles={"p_ch": p_ch, "p_dsc": p_dsc, "x_ch": x_ch, "x_dsc": x_dsc,
                 "du_ch": du_ch, "du_dsc": du_dsc, "dl_ch": dl_ch,
                 "dl_dsc": dl_dsc, "soc": soc, "soc_up": soc_up,
                 "soc_dn": soc_dn, "flx_up": flx_up, "flx_dn": flx_dn,
                 "unc_up": unc_up, "unc_dn": unc_dn})


def emit_tcl(model: Model, p: TclParams, grid: TimeGrid, r: float,
             tag: str = "tcl") -> DeviceEmission:
    """Cooling unit: RC temperature recursions for the planned trajectory and
    for both full-variation trajectories, with chance-constrained comfort.

    The comfort band is tightened by sigma_ex*quantile_gauss(r) so that the
    single-step Gaussian forecast error violates it with probability <= r.
    Over-temperature couples to the *negative* power variation (less cooling
    heats the room) and vice versa.
    """
    T, dt = grid.T, grid.dt
    up = p.validate(grid, r)
    alpha, beta = p.alpha(grid), p.beta(grid)
    gain = beta * p.resistance * p.eta_c
    ext = p.ext.mean.values
    q = quantile_gauss(r)
    margin = p.ext.sigma.values * q

    # generous but finite outer bounds for the temperature states
    t_lo = min(p.theta_min, p.theta0, float(ext.min())) - 50.0
    t_hi = max(p.theta_max, p.theta0, float(ext.max())) + 50.0

    pw = np.empty(T, dtype=int)
    x = np.empty(T, dtype=int)
    du = np.empty(T, dtype=int)
    dl = np.empty(T, dtype=int)
    for k in range(T):
        allowed = up[k]
        cap = p.p_max if allowed else 0.0
        pw[k] = model.add_var(0.0, cap, name=f"{tag}_p{k}")
        x[k] = model.add_binary(name=f"{tag}_x{k}",
                                fixed=None if allowed else 0.0)
        du[k] = model.add_var(0.0, cap, name=f"{tag}_du{k}")
        dl[k] = model.add_var(-cap, 0.0, name=f"{tag}_dl{k}")
    theta = np.array([model.add_var(p.theta0 if k == 0 else t_lo,
                                    p.theta0 if k == 0 else t_hi,
                                    name=f"{tag}_th{k}")
                      for k in range(T + 1)])
    # tightened comfort bounds enter as per-step variable bounds
    theta_up = np.array([model.add_var(
        p.theta0 if k == 0 else t_lo,
        p.theta0 if k == 0 else p.theta_max - margin[k - 1],
        name=f"{tag}_thu{k}") for k in range(T + 1)])
    theta_dn = np.array([model.add_var(
        p.theta0 if k == 0 else p.theta_min + margin[k - 1],
        p.theta0 if k == 0 else t_hi,
        name=f"{tag}_thd{k}") for k in range(T + 1)])
    flx_up = np.array([model.add_var(0.0, p.p_max if up[k] else 0.0,
                                     name=f"{tag}_fu{k}") for k in range(T)])
    unc_up = np.array([model.add_var(0.0, p.p_max if up[k] else 0.0,
                                     name=f"{tag}_uu{k}") for k in range(T)])
    flx_dn = np.array([model.add_var(-p.p_max if up[k] else 0.0, 0.0,
                                     name=f"{tag}_fd{k}") for k in range(T)])
    unc_dn = np.array([model.add_var(-p.p_max if up[k] else 0.0, 0.0,
                                     name=f"{tag}_ud{k}") for k in range(T)])

    for k in range(T):
        model.add_constraint(
            LinExpr.term(theta[k + 1]) - LinExpr.term(theta[k], alpha)
            + LinExpr.term(pw[k], gain),
            EQ, beta * ext[k], f"{tag}_dyn{k}")
        # over-temperature runs on the reduced-cooling (negative) variation
        model.add_constraint(
            LinExpr.term(theta_up[k + 1]) - LinExpr.term(theta_up[k], alpha)
            + (LinExpr.term(pw[k]) + LinExpr.term(dl[k])) * gain,
            EQ, beta * ext[k], f"{tag}_dynu{k}")
        model.add_constraint(
            LinExpr.term(theta_dn[k + 1]) - LinExpr.term(theta_dn[k], alpha)
            + (LinExpr.term(pw[k]) + LinExpr.term(du[k])) * gain,
            EQ, beta * ext[k], f"{tag}_dynd{k}")
        if up[k]:
            model.add_constraint(
                LinExpr.term(pw[k]) - LinExpr.term(x[k], p.p_max), LE, 0.0,
                f"{tag}_gate{k}")
            model.add_constraint(
                LinExpr.term(pw[k]) + LinExpr.term(du[k])
                - LinExpr.term(x[k], p.p_max), LE, 0.0, f"{tag}_ugate{k}")
            model.add_constraint(
                LinExpr.term(pw[k]) + LinExpr.term(dl[k]), GE, 0.0,
                f"{tag}_lfloor{k}")
            model.add_constraint(
                LinExpr.term(flx_up[k]) + LinExpr.term(unc_up[k])
                - LinExpr.term(du[k]), EQ, 0.0, f"{tag}_usplit{k}")
            model.add_constraint(
                LinExpr.term(flx_dn[k]) + LinExpr.term(unc_dn[k])
                - LinExpr.term(dl[k]), EQ, 0.0, f"{tag}_lsplit{k}")

    power = [LinExpr.term(pw[k]) for k in range(T)]
    return DeviceEmission(
        power,
        [LinExpr.term(flx_up[k]) for k in range(T)],
        [LinExpr.term(flx_dn[k]) for k in range(T)],
        [LinExpr.term(unc_up[k]) for k in range(T)],
        [LinExpr.term(unc_dn[k]) for k in range(T)],
        handles={"p": pw, "x": x, "du": du, "dl": dl, "theta": theta,
                 "theta_up": theta_up, "theta_dn": theta_dn,
                 "flx_up": flx_up, "flx_dn": flx_dn, "unc_up": unc_up,
                 "unc_dn": unc_dn})


def emit_fixed(model: Model, f: FixedProfiles, grid: TimeGrid) -> DeviceEmission:
    """Forecast-driven devices contribute constants and their error variance."""
    net = f.net_power(grid)
    power = [LinExpr(const=net[k]) for k in range(grid.T)]
    T = grid.T
    return DeviceEmission(power, _zeros(T), _zeros(T), _zeros(T), _zeros(T),
                          handles={}, variance=f.variance(grid))


# ---------------------------------------------------------------------------
# pure trajectory integrators (shared by plan audit and intra-day simulation)
# ---------------------------------------------------------------------------

def bess_soc_path(p: BessParams, p_ch: np.ndarray, p_dsc: np.ndarray,
                  dt: float, soc0: float | None = None) -> np.ndarray:
    """Integrate the SoC recursion; returns T+1 samples starting at soc0."""
    start = p.soc0 if soc0 is None else soc0
    steps = (dt / p.e_nom) * (p.eta_ch * np.asarray(p_ch)
                              + p.eta_dsc * np.asarray(p_dsc))
    return np.concatenate([[start], start + np.cumsum(steps)])


def tcl_theta_path(p: TclParams, power: np.ndarray, ext: np.ndarray,
                   dt: float, theta0: float | None = None) -> np.ndarray:
    """Integrate the RC room-temperature recursion under a given external
    temperature trace; returns T+1 samples."""
    alpha = math.exp(-dt / (p.capacitance * p.resistance))
    beta = 1.0 - alpha
    out = np.empty(len(power) + 1)
    out[0] = p.theta0 if theta0 is None else theta0
    for k in range(len(power)):
        out[k + 1] = (alpha * out[k]
                      - beta * p.resistance * p.eta_c * power[k]
                      + beta * ext[k])
    return out
