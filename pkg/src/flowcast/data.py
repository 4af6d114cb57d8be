"""Flow/context ingestion, periodic windowing, chronological splits, scaling.

A training sample looks back along three periodicities.  For an anchor step t
with history length P and horizon Q (all in Δ-sized steps):

* hour branch: steps [t-P+1, t] — the immediately preceding window;
* day branch: the P steps ending at the clock time of step t+Q on the
  previous day;
* week branch: same, one week back;
* target Y: steps [t+1, t+Q].

The day/week windows end level with the *target's* end, one period earlier,
so the model sees how the quantity it must predict behaved at the same time
of day/week.
"""

from __future__ import annotations

import calendar
import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .errors import AlignmentError, ConfigError, ValidationError
from .graphs import RegionTable, load_regions, load_trips

FLOW_CHANNELS = 2  # inflow, outflow

DEFAULT_CONTEXT_SCHEMA = "tod_sin,tod_cos,dow[7],holiday,temperature,wind,condition[3]"


def parse_timestamp(text: str) -> int:
    """ISO-8601 to epoch seconds; naive timestamps are taken as UTC."""
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        return calendar.timegm(dt.timetuple())
    return int(dt.timestamp())


def format_timestamp(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%S")


@dataclass
class ContextSchema:
    """Ordered context feature names plus which column runs are one-hot groups.

    The compact config form ``a,b,grp[3]`` expands ``grp[3]`` into columns
    ``grp_0,grp_1,grp_2`` and records them as a group whose rows must sum
    to one.
    """

    names: list[str]
    onehot_groups: list[tuple[str, int, int]]  # (base, start, stop) half-open

    @property
    def width(self) -> int:
        return len(self.names)


def parse_context_schema(text: str) -> ContextSchema:
    names: list[str] = []
    groups: list[tuple[str, int, int]] = []
    for item in [s.strip() for s in text.split(",") if s.strip()]:
        if item.endswith("]") and "[" in item:
            base, _, size = item[:-1].partition("[")
            try:
                k = int(size)
            except ValueError:
                raise ConfigError(f"bad one-hot size in context schema item {item!r}")
            if k < 2:
                raise ConfigError(f"one-hot group {base!r} needs at least 2 categories")
            groups.append((base, len(names), len(names) + k))
            names.extend(f"{base}_{i}" for i in range(k))
        else:
            names.append(item)
    if len(set(names)) != len(names):
        raise ConfigError(f"context schema has duplicate feature names: {text!r}")
    if not names:
        raise ConfigError("context schema is empty")
    return ContextSchema(names, groups)


@dataclass
class FlowSeries:
    timestamps: np.ndarray  # epoch seconds, shape (T,)
    values: np.ndarray  # (N, T, 2) nonnegative
    region_ids: list[str]
    delta_s: int

    @property
    def n_steps(self) -> int:
        return int(self.timestamps.shape[0])


@dataclass
class ContextSeries:
    timestamps: np.ndarray
    values: np.ndarray  # (N, T, c2)
    region_ids: list[str]
    schema: ContextSchema


def _check_uniform(timestamps: np.ndarray, delta_s: int, label: str) -> None:
    if timestamps.size < 2:
        raise ValidationError(f"{label}: need at least 2 time steps")
    gaps = np.diff(timestamps)
    bad = np.flatnonzero(gaps != delta_s)
    if bad.size:
        i = int(bad[0])
        raise AlignmentError(
            f"{label}: expected {delta_s}s spacing but step after "
            f"{format_timestamp(timestamps[i])} is {format_timestamp(timestamps[i + 1])}"
        )


def load_flows(path, regions: RegionTable, delta_minutes: int = 30) -> FlowSeries:
    delta_s = int(delta_minutes * 60)
    idx = regions.index()
    cells: dict[tuple[int, str], tuple[float, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"timestamp", "region_id", "inflow", "outflow"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: expected header timestamp,region_id,inflow,outflow")
        for row in reader:
            rid = row["region_id"]
            if rid not in idx:
                raise ValidationError(f"{path}: unknown region id {rid!r}")
            key = (parse_timestamp(row["timestamp"]), rid)
            if key in cells:
                raise ValidationError(
                    f"{path}: duplicate row for {rid!r} at {row['timestamp']}"
                )
            cells[key] = (float(row["inflow"]), float(row["outflow"]))
    if not cells:
        raise ValidationError(f"{path}: no flow rows")
    times = np.array(sorted({t for t, _ in cells}), dtype=np.int64)
    _check_uniform(times, delta_s, str(path))
    values = np.zeros((regions.n, times.size, FLOW_CHANNELS))
    for k, t in enumerate(times):
        for rid, i in idx.items():
            cell = cells.get((int(t), rid))
            if cell is None:
                raise AlignmentError(
                    f"{path}: missing flow row for region {rid!r} at {format_timestamp(t)}"
                )
            values[i, k] = cell
    if (values < 0).any():
        n, k, _ = np.argwhere(values < 0)[0]
        raise ValidationError(
            f"{path}: negative count for region {regions.ids[n]!r} at "
            f"{format_timestamp(times[k])}"
        )
    return FlowSeries(times, values, list(regions.ids), delta_s)


def load_context(path, regions: RegionTable, schema: ContextSchema) -> ContextSeries:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "timestamp" not in reader.fieldnames:
            raise ValidationError(f"{path}: expected a timestamp column")
        missing = [c for c in schema.names if c not in reader.fieldnames]
        if missing:
            raise ValidationError(f"{path}: missing context columns {missing}")
        per_region = "region_id" in reader.fieldnames
        rows: dict[tuple[int, str | None], list[float]] = {}
        for row in reader:
            rid = row["region_id"] if per_region else None
            if per_region and rid not in regions.index():
                raise ValidationError(f"{path}: unknown region id {rid!r}")
            key = (parse_timestamp(row["timestamp"]), rid)
            if key in rows:
                raise ValidationError(f"{path}: duplicate context row at {row['timestamp']}")
            try:
                rows[key] = [float(row[c]) for c in schema.names]
            except ValueError as e:
                raise ValidationError(f"{path}: non-numeric context value: {e}")
    if not rows:
        raise ValidationError(f"{path}: no context rows")
    times = np.array(sorted({t for t, _ in rows}), dtype=np.int64)
    values = np.zeros((regions.n, times.size, schema.width))
    idx = regions.index()
    for k, t in enumerate(times):
        if per_region:
            for rid, i in idx.items():
                feats = rows.get((int(t), rid))
                if feats is None:
                    raise AlignmentError(
                        f"{path}: missing context for region {rid!r} at {format_timestamp(t)}"
                    )
                values[i, k] = feats
        else:
            values[:, k] = rows[(int(t), None)]
    if not np.isfinite(values).all():
        raise ValidationError(f"{path}: context contains non-finite values")
    for base, start, stop in schema.onehot_groups:
        block = values[:, :, start:stop]
        if (block < 0).any() or (np.abs(block.sum(axis=-1) - 1.0) > 1e-9).any():
            raise ValidationError(
                f"{path}: one-hot group {base!r} has rows that do not sum to 1"
            )
    return ContextSeries(times, values, list(regions.ids), schema)


def load_dataset(
    flows_path,
    context_path,
    regions_path,
    trips_path,
    schema: ContextSchema | str = DEFAULT_CONTEXT_SCHEMA,
    delta_minutes: int = 30,
):
    """Load and cross-validate the four input files.

    Returns ``(FlowSeries, ContextSeries, RegionTable, trips)`` with flow and
    context guaranteed to share timestamps and region ordering.
    """
    if isinstance(schema, str):
        schema = parse_context_schema(schema)
    regions = load_regions(regions_path)
    trips = load_trips(trips_path)
    flow = load_flows(flows_path, regions, delta_minutes)
    ctx = load_context(context_path, regions, schema)
    if flow.timestamps.shape != ctx.timestamps.shape or (flow.timestamps != ctx.timestamps).any():
        fs, cs = set(flow.timestamps.tolist()), set(ctx.timestamps.tolist())
        odd = sorted(fs.symmetric_difference(cs))
        when = format_timestamp(odd[0]) if odd else format_timestamp(ctx.timestamps[0])
        raise AlignmentError(f"flow and context timestamps disagree, first at {when}")
    return flow, ctx, regions, trips


@dataclass
class Sample:
    t: int  # anchor step index into the source series
    X_hour: np.ndarray  # (N, P, c1)
    X_day: np.ndarray
    X_week: np.ndarray
    C_hour: np.ndarray  # (N, P, c2)
    C_day: np.ndarray
    C_week: np.ndarray
    C_future: np.ndarray  # (N, Q, c2)
    Y: np.ndarray  # (N, Q, c1)


def periodic_window_starts(t: int, P: int, Q: int, spd: int, spw: int):
    """Start index of each P-long input window for anchor t (inclusive starts)."""
    return {
        "hour": t - P + 1,
        "day": t + Q - spd - P + 1,
        "week": t + Q - spw - P + 1,
    }


def make_samples(flow: FlowSeries, ctx: ContextSeries, P: int, Q: int) -> list[Sample]:
    if P <= 0 or Q <= 0:
        raise ConfigError(f"window lengths must be positive, got P={P} Q={Q}")
    if flow.timestamps.shape != ctx.timestamps.shape or (flow.timestamps != ctx.timestamps).any():
        raise AlignmentError("flow and context series are not aligned")
    if 86400 % flow.delta_s != 0:
        raise ConfigError(f"step size {flow.delta_s}s does not divide a day evenly")
    spd = 86400 // flow.delta_s
    spw = 7 * spd
    if Q > spd:
        raise ConfigError(
            f"horizon Q={Q} reaches past one day ({spd} steps); the day-back "
            "window would leak future values"
        )
    T = flow.n_steps
    first = max(P - 1, spw + P - Q - 1)
    last = T - 1 - Q
    samples: list[Sample] = []
    for t in range(first, last + 1):
        w = periodic_window_starts(t, P, Q, spd, spw)
        fx, cx = flow.values, ctx.values
        samples.append(
            Sample(
                t=t,
                X_hour=fx[:, w["hour"] : w["hour"] + P].copy(),
                X_day=fx[:, w["day"] : w["day"] + P].copy(),
                X_week=fx[:, w["week"] : w["week"] + P].copy(),
                C_hour=cx[:, w["hour"] : w["hour"] + P].copy(),
                C_day=cx[:, w["day"] : w["day"] + P].copy(),
                C_week=cx[:, w["week"] : w["week"] + P].copy(),
                C_future=cx[:, t + 1 : t + 1 + Q].copy(),
                Y=fx[:, t + 1 : t + 1 + Q].copy(),
            )
        )
    return samples


def expected_sample_count(T: int, P: int, Q: int, spw: int) -> int:
    """Closed form for len(make_samples(...)): T - spw - P + 1, floored at 0."""
    return max(0, T - (spw + P - Q) - Q + 1)


def split_60_20_20(samples: list[Sample]):
    n = len(samples)
    if n < 5:
        raise ConfigError(f"need at least 5 samples to split, got {n}")
    order = sorted(samples, key=lambda s: s.t)
    n_train = int(n * 0.6)
    n_val = int(n * 0.2)
    return order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :]


@dataclass
class Normalizer:
    """Per-channel min-max scaling fitted on training data only.

    Channels with zero spread map to 0 (span clamped to 1) so constant
    channels survive the round trip.
    """

    lo: np.ndarray  # (c1,)
    hi: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        if values.ndim != 3:
            raise ValidationError("Normalizer.fit expects an (N, T, c) tensor")
        return cls(lo=values.min(axis=(0, 1)), hi=values.max(axis=(0, 1)))

    def _span(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / self._span()

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return y * self._span() + self.lo


def fit_normalizer_on_train(flow: FlowSeries, train: list[Sample], Q: int) -> Normalizer:
    """Fit on the contiguous series prefix the training split can observe."""
    if not train:
        raise ConfigError("cannot fit a normalizer on an empty training split")
    last_step = max(s.t for s in train) + Q
    return Normalizer.fit(flow.values[:, : last_step + 1])
