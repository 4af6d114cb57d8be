"""Synthetic bike-flow scenario on a small city grid.

Produces the four CSV inputs the data pipeline consumes (regions, trips,
flows, citywide context) plus a ``flows_expected.csv`` with the exact
Poisson means, so tests can compare samples against closed-form values.

The generative story: every region has a two-peak weekday-style demand
profile; a daily weather level in [0.2, 1.2] scales demand multiplicatively
and is exposed to the model through the temperature and condition features;
departing trips land at a grid neighbour (or stay home) one step later, so
total arrivals always equal total departures.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import format_timestamp, parse_timestamp
from .errors import ConfigError
from .fileio import atomic_write_text
from .graphs import RegionTable

DAY_S = 86400
MIN_DAYS = 14  # anything shorter cannot produce a single weekly training sample

# weather level thresholds for the 3-bucket condition one-hot (clear/overcast/storm)
_COND_EDGES = (0.9, 0.55)


@dataclass(frozen=True)
class SynthScenario:
    n_rows: int = 2
    n_cols: int = 3
    spacing_km: float = 0.9
    origin_lat: float = 40.0
    origin_lon: float = -74.0
    start: str = "2024-01-01T00:00:00"
    days: int = 28
    delta_s: int = 1800
    base_scale: float = 30.0
    coupling: float = 0.35
    weather_mode: str = "random"  # "random" draws a level per day, "flat" pins 1.0
    wiggle: float = 0.08  # intra-day sinusoidal modulation of the weather level
    forced_day_levels: Mapping[int, float] = field(default_factory=dict)
    seed: int = 7

    def __post_init__(self):
        if self.n_rows * self.n_cols < 2:
            raise ConfigError("grid needs at least 2 regions")
        if self.days < MIN_DAYS:
            raise ConfigError(
                f"scenario needs at least {MIN_DAYS} days to cover a weekly lag, got {self.days}"
            )
        if self.delta_s <= 0 or DAY_S % self.delta_s:
            raise ConfigError(f"delta_s={self.delta_s} must divide one day")
        if not 0.0 <= self.coupling <= 1.0:
            raise ConfigError(f"coupling must lie in [0, 1], got {self.coupling}")
        if self.base_scale <= 0:
            raise ConfigError("base_scale must be positive")
        if self.weather_mode not in ("random", "flat"):
            raise ConfigError(f"unknown weather_mode {self.weather_mode!r}")
        for d, lv in self.forced_day_levels.items():
            if not 0 <= d < self.days:
                raise ConfigError(f"forced weather level for day {d} outside scenario")
            if not 0.2 <= lv <= 1.2:
                raise ConfigError(f"weather level {lv} for day {d} outside [0.2, 1.2]")

    @property
    def n_regions(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def steps_per_day(self) -> int:
        return DAY_S // self.delta_s

    @property
    def n_steps(self) -> int:
        return self.days * self.steps_per_day


def region_table(sc: SynthScenario) -> RegionTable:
    """Regions on a row-major grid, id ``r00`` at the origin corner."""
    km_per_deg_lat = 111.195
    dlat = sc.spacing_km / km_per_deg_lat
    dlon = sc.spacing_km / (km_per_deg_lat * math.cos(math.radians(sc.origin_lat)))
    ids, lats, lons = [], [], []
    for r in range(sc.n_rows):
        for c in range(sc.n_cols):
            ids.append(f"r{r * sc.n_cols + c:02d}")
            lats.append(sc.origin_lat + r * dlat)
            lons.append(sc.origin_lon + c * dlon)
    return RegionTable(ids, np.array(lats), np.array(lons))


def destination_matrix(sc: SynthScenario) -> np.ndarray:
    """Row-stochastic trip destinations: stay with 1-coupling, else a grid neighbour."""
    N = sc.n_regions
    P = np.zeros((N, N))
    for r in range(sc.n_rows):
        for c in range(sc.n_cols):
            i = r * sc.n_cols + c
            nbrs = []
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < sc.n_rows and 0 <= cc < sc.n_cols:
                    nbrs.append(rr * sc.n_cols + cc)
            P[i, i] = 1.0 - sc.coupling
            for j in nbrs:
                P[i, j] = sc.coupling / len(nbrs)
    return P


def weather_levels(sc: SynthScenario) -> np.ndarray:
    """One multiplier per day; the stream an operator would call 'today's weather'."""
    if sc.weather_mode == "flat":
        levels = np.ones(sc.days)
    else:
        rng = np.random.default_rng(sc.seed + 1)
        levels = rng.uniform(0.3, 1.1, sc.days)
    for d, lv in sc.forced_day_levels.items():
        levels[d] = lv
    return levels


def weather_series(sc: SynthScenario) -> np.ndarray:
    """Per-step multiplier: daily level plus a smooth intra-day wiggle, clipped to [0.2, 1.2]."""
    levels = weather_levels(sc)
    k = np.arange(sc.n_steps)
    tod = (k % sc.steps_per_day) / sc.steps_per_day
    w = levels[k // sc.steps_per_day] + sc.wiggle * np.sin(2 * np.pi * (tod + 0.25))
    return np.clip(w, 0.2, 1.2)


def base_profiles(sc: SynthScenario) -> np.ndarray:
    """(N, steps_per_day) demand shape: commuter peaks at 08:00 and 18:00.

    Regions lean morning-heavy or evening-heavy depending on grid column, so
    the spatial pattern is not a pure rescaling between regions.
    """
    spd = sc.steps_per_day
    hours = np.arange(spd) * (24.0 / spd)

    def bump(center):
        d = np.minimum(np.abs(hours - center), 24.0 - np.abs(hours - center))
        return np.exp(-0.5 * (d / 1.5) ** 2)

    am, pm = bump(8.0), bump(18.0)
    out = np.zeros((sc.n_regions, spd))
    for r in range(sc.n_rows):
        for c in range(sc.n_cols):
            i = r * sc.n_cols + c
            mix = (c + 1) / (sc.n_cols + 1)  # west columns commute out early, east late
            out[i] = sc.base_scale * ((1 - mix) * am + mix * pm + 0.15)
    return out


def expected_outflow(sc: SynthScenario) -> np.ndarray:
    """(N, T) Poisson means for departures: profile times weather."""
    prof = base_profiles(sc)
    w = weather_series(sc)
    k = np.arange(sc.n_steps) % sc.steps_per_day
    return prof[:, k] * w[None, :]


def _warmup_rate(sc: SynthScenario) -> np.ndarray:
    # The step just before the series start, so step 0 already has arrivals.
    # Uses day-0 weather at the last slot of the (periodic) daily profile.
    prof = base_profiles(sc)
    levels = weather_levels(sc)
    tod = (sc.steps_per_day - 1) / sc.steps_per_day
    w = float(np.clip(levels[0] + sc.wiggle * np.sin(2 * np.pi * (tod + 0.25)), 0.2, 1.2))
    return prof[:, -1] * w


def expected_inflow(sc: SynthScenario) -> np.ndarray:
    """(N, T) arrival means: last step's departures pushed through the grid."""
    lam = expected_outflow(sc)
    P = destination_matrix(sc)
    prev = np.concatenate([_warmup_rate(sc)[:, None], lam[:, :-1]], axis=1)
    return P.T @ prev


def sample_flows(sc: SynthScenario, rng: np.random.Generator):
    """Draw one realisation.

    Returns (outflow, inflow, trips) where flows are (N, T) integer arrays and
    trips is the (N, N) matrix of all sampled movements including stays.
    Every departure arrives somewhere one step later, so
    ``inflow[:, t].sum() == outflow[:, t - 1].sum()`` holds exactly.
    """
    lam = expected_outflow(sc)
    P = destination_matrix(sc)
    N, T = lam.shape
    outflow = np.zeros((N, T), dtype=np.int64)
    inflow = np.zeros((N, T), dtype=np.int64)
    trips = np.zeros((N, N), dtype=np.int64)

    warm = rng.poisson(_warmup_rate(sc))
    pending = rng.multinomial(warm, P).sum(axis=0)  # arrivals landing at step 0
    for t in range(T):
        inflow[:, t] = pending
        out_t = rng.poisson(lam[:, t])
        moves = rng.multinomial(out_t, P)
        outflow[:, t] = out_t
        trips += moves
        pending = moves.sum(axis=0)
    return outflow, inflow, trips


def oracle_effect(sc: SynthScenario, day: int, multiplier: float) -> float:
    """Exact change in total expected departures on ``day`` if its weather
    multiplier were replaced by ``multiplier`` at every step."""
    if not 0 <= day < sc.days:
        raise ConfigError(f"day {day} outside scenario range")
    spd = sc.steps_per_day
    lo, hi = day * spd, (day + 1) * spd
    lam = expected_outflow(sc)[:, lo:hi]
    w = weather_series(sc)[lo:hi]
    base = lam / w[None, :]
    return float((base * (multiplier - w[None, :])).sum())


def _context_rows(sc: SynthScenario, timestamps: np.ndarray) -> list[list[str]]:
    w = weather_series(sc)
    rows = []
    for k, ts in enumerate(timestamps):
        sec = int(ts) % DAY_S
        ang = 2 * np.pi * sec / DAY_S
        dow = time.gmtime(int(ts)).tm_wday
        cond = 2 if w[k] < _COND_EDGES[1] else (1 if w[k] < _COND_EDGES[0] else 0)
        vals = [math.sin(ang), math.cos(ang)]
        vals += [1.0 if i == dow else 0.0 for i in range(7)]
        vals += [0.0]  # no holidays in the synthetic calendar
        vals += [(w[k] - 0.2) / 1.0]
        vals += [0.5 + 0.4 * math.sin(2 * np.pi * k / (3 * sc.steps_per_day) + 1.0)]
        vals += [1.0 if i == cond else 0.0 for i in range(3)]
        rows.append([format_timestamp(int(ts))] + [repr(float(v)) for v in vals])
    return rows


CONTEXT_HEADER = (
    "timestamp,tod_sin,tod_cos,"
    + ",".join(f"dow_{i}" for i in range(7))
    + ",holiday,temperature,wind,"
    + ",".join(f"condition_{i}" for i in range(3))
)


def generate(sc: SynthScenario, out_dir) -> dict[str, Path]:
    """Write the full CSV bundle into ``out_dir`` and return the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    regions = region_table(sc)
    t0 = parse_timestamp(sc.start)
    timestamps = t0 + np.arange(sc.n_steps, dtype=np.int64) * sc.delta_s

    rng = np.random.default_rng(sc.seed)
    outflow, inflow, trips = sample_flows(sc, rng)
    exp_out, exp_in = expected_outflow(sc), expected_inflow(sc)

    paths = {k: out / f"{k}.csv" for k in
             ("regions", "trips", "flows", "flows_expected", "context")}

    lines = ["region_id,lat,lon"]
    for i, rid in enumerate(regions.ids):
        lines.append(f"{rid},{repr(float(regions.lat[i]))},{repr(float(regions.lon[i]))}")
    atomic_write_text(paths["regions"], "\n".join(lines) + "\n")

    lines = ["from,to,count"]
    for i in range(sc.n_regions):
        for j in range(sc.n_regions):
            if trips[i, j]:
                lines.append(f"{regions.ids[i]},{regions.ids[j]},{int(trips[i, j])}")
    atomic_write_text(paths["trips"], "\n".join(lines) + "\n")

    def flow_csv(arr_in, arr_out, fmt):
        lines = ["timestamp,region_id,inflow,outflow"]
        for k, ts in enumerate(timestamps):
            stamp = format_timestamp(int(ts))
            for i, rid in enumerate(regions.ids):
                lines.append(f"{stamp},{rid},{fmt(arr_in[i, k])},{fmt(arr_out[i, k])}")
        return "\n".join(lines) + "\n"

    atomic_write_text(paths["flows"], flow_csv(inflow, outflow, lambda v: str(int(v))))
    atomic_write_text(
        paths["flows_expected"], flow_csv(exp_in, exp_out, lambda v: repr(float(v)))
    )

    rows = _context_rows(sc, timestamps)
    atomic_write_text(
        paths["context"],
        CONTEXT_HEADER + "\n" + "\n".join(",".join(r) for r in rows) + "\n",
    )
    return paths
