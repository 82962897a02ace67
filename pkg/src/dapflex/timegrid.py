"""Day discretization, per-step profiles, prices and forecasts.

Everything downstream is indexed by a single :class:`TimeGrid`: ``T`` steps of
``dt`` hours covering exactly one day.  Per-step series are carried as
:class:`Profile` values with an explicit unit tag so that unit mix-ups fail
loudly at module boundaries instead of producing silently wrong numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

HOURS_PER_DAY = 24.0
_GRID_TOL = 1e-9

#: unit tags accepted by Profile
UNITS = ("kW", "kWh", "degC", "EUR/kWh", "pu")


@dataclass(frozen=True)
class TimeGrid:
    """Partition of one day into ``T`` steps of ``dt`` hours."""

    T: int
    dt: float

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if abs(self.T * self.dt - HOURS_PER_DAY) > _GRID_TOL:
            raise ValueError(
                f"T*dt must cover 24 h, got {self.T}*{self.dt} = {self.T * self.dt}"
            )

    @property
    def hours(self) -> np.ndarray:
        """Start hour of each step."""
        return np.arange(self.T) * self.dt


def make_time_grid(T: int, dt: float) -> TimeGrid:
    return TimeGrid(int(T), float(dt))


def _as_readonly(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Profile:
    """A per-step series of length ``grid.T`` with a unit tag."""

    values: np.ndarray
    unit: str

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly(self.values))
        if self.values.ndim != 1:
            raise ValueError("profile values must be one-dimensional")
        if self.unit not in UNITS:
            raise ValueError(f"unknown unit {self.unit!r}, expected one of {UNITS}")

    def __len__(self) -> int:
        return len(self.values)

    def check_grid(self, grid: TimeGrid) -> "Profile":
        if len(self.values) != grid.T:
            raise ValueError(
                f"profile length {len(self.values)} does not match grid T={grid.T}"
            )
        return self

    def require_unit(self, unit: str) -> "Profile":
        if self.unit != unit:
            raise ValueError(f"expected unit {unit!r}, got {self.unit!r}")
        return self


def profile(values, unit: str, grid: TimeGrid | None = None) -> Profile:
    """Build a Profile, optionally checking its length against ``grid``."""
    p = Profile(np.asarray(values, dtype=float), unit)
    if grid is not None:
        p.check_grid(grid)
    return p


def const_profile(value: float, unit: str, grid: TimeGrid) -> Profile:
    return Profile(np.full(grid.T, float(value)), unit)


def profile_energy(p: Profile, grid: TimeGrid) -> Profile:
    """Convert a kW profile to the per-step energies (kWh): elementwise dt*p."""
    p.require_unit("kW").check_grid(grid)
    return Profile(p.values * grid.dt, "kWh")


@dataclass(frozen=True)
class PriceSet:
    """Import/export energy prices and the two reserve prices, all EUR/kWh."""

    c_imp: Profile
    c_exp: Profile
    c_flx: Profile
    c_flx_agt: Profile

    def __post_init__(self):
        for name in ("c_imp", "c_exp", "c_flx", "c_flx_agt"):
            pr: Profile = getattr(self, name)
            pr.require_unit("EUR/kWh")
            if np.any(pr.values < 0):
                raise ValueError(f"price {name} must be non-negative")

    def check_grid(self, grid: TimeGrid) -> "PriceSet":
        for name in ("c_imp", "c_exp", "c_flx", "c_flx_agt"):
            getattr(self, name).check_grid(grid)
        return self


@dataclass(frozen=True)
class Forecast:
    """Gaussian per-step forecast: mean profile plus per-step std deviation."""

    mean: Profile
    sigma: Profile

    def __post_init__(self):
        if self.mean.unit != self.sigma.unit:
            raise ValueError("forecast mean and sigma must share a unit")
        if len(self.mean.values) != len(self.sigma.values):
            raise ValueError("forecast mean and sigma must share a length")
        if np.any(self.sigma.values < 0):
            raise ValueError("forecast sigma must be non-negative")

    def check_grid(self, grid: TimeGrid) -> "Forecast":
        self.mean.check_grid(grid)
        return self


def forecast(mean, sigma, unit: str, grid: TimeGrid | None = None) -> Forecast:
    """Build a Forecast; scalar ``sigma`` is broadcast across steps."""
    mean = np.asarray(mean, dtype=float)
    sigma_arr = np.broadcast_to(np.asarray(sigma, dtype=float), mean.shape).copy()
    f = Forecast(Profile(mean, unit), Profile(sigma_arr, unit))
    if grid is not None:
        f.check_grid(grid)
    return f
