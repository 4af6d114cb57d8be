"""Static region graphs: geographic distance kernel and trip-transition frequencies.

Two fixed N x N structures feed the graph convolution:

* ``geo``: Gaussian kernel of pairwise haversine distance, cut off at a
  distance threshold (default 2 km), zero diagonal, symmetric.
* ``trans``: historical trip counts row-normalized into transition
  probabilities; regions with no outgoing trips keep an all-zero row.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, ValidationError

EARTH_RADIUS_KM = 6371.0


@dataclass
class RegionTable:
    ids: list[str]
    lat: np.ndarray  # degrees, shape (N,)
    lon: np.ndarray

    def __post_init__(self):
        self.lat = np.asarray(self.lat, dtype=float)
        self.lon = np.asarray(self.lon, dtype=float)
        n = len(self.ids)
        if n < 2:
            raise ValidationError("need at least 2 regions")
        if len(set(self.ids)) != n:
            dupes = sorted({r for r in self.ids if self.ids.count(r) > 1})
            raise ValidationError(f"duplicate region ids: {dupes}")
        if self.lat.shape != (n,) or self.lon.shape != (n,):
            raise ValidationError("lat/lon length must match region count")
        if (np.abs(self.lat) > 90).any():
            raise ValidationError("latitude outside [-90, 90]")
        if (np.abs(self.lon) > 180).any():
            raise ValidationError("longitude outside [-180, 180]")

    @property
    def n(self) -> int:
        return len(self.ids)

    def index(self) -> dict[str, int]:
        return {r: i for i, r in enumerate(self.ids)}


@dataclass
class StaticGraph:
    kind: str  # "geo" | "trans"
    A: np.ndarray  # (N, N) nonnegative
    region_ids: list[str]
    meta: dict = field(default_factory=dict)


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between points given in degrees."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = np.radians(np.subtract(lat2, lat1))
    dlam = np.radians(np.subtract(lon2, lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def pairwise_distances_km(regions: RegionTable) -> np.ndarray:
    d = haversine_km(
        regions.lat[:, None], regions.lon[:, None], regions.lat[None, :], regions.lon[None, :]
    )
    # mirror the upper triangle so the matrix is symmetric to the last bit
    d = np.triu(d, 1)
    return d + d.T


def distance_kernel(dis: np.ndarray, sigma2: float) -> np.ndarray:
    """Gaussian similarity exp(-dis^2 / sigma^2)."""
    return np.exp(-np.square(dis) / sigma2)


def build_geo_graph(
    regions: RegionTable, epsilon_km: float = 2.0, connect_within: bool = True
) -> StaticGraph:
    """Distance-kernel graph over region centers.

    ``sigma2`` is the variance of the full N^2 distance matrix (diagonal
    included).  ``connect_within=True`` keeps edges with ``dis <= epsilon_km``;
    flipping it keeps only the distant pairs instead, for anyone who wants the
    opposite reading of the threshold rule.
    """
    if epsilon_km <= 0:
        raise ValidationError(f"epsilon_km must be positive, got {epsilon_km}")
    dis = pairwise_distances_km(regions)
    sigma2 = float(dis.var())
    if sigma2 == 0.0:
        raise DegenerateInputError(
            "all regions are co-located; distance variance is zero"
        )
    keep = dis <= epsilon_km if connect_within else dis > epsilon_km
    A = np.where(keep, distance_kernel(dis, sigma2), 0.0)
    np.fill_diagonal(A, 0.0)
    return StaticGraph(
        kind="geo",
        A=A,
        region_ids=list(regions.ids),
        meta={"sigma2": sigma2, "epsilon_km": epsilon_km, "connect_within": connect_within},
    )


def build_trans_graph(
    trips: list[tuple[str, str, float]], regions: RegionTable
) -> StaticGraph:
    """Row-normalized trip-count transitions.

    Rows with no outgoing trips stay all-zero; those region ids are listed in
    ``meta["isolated_regions"]``.
    """
    idx = regions.index()
    counts = np.zeros((regions.n, regions.n))
    for src, dst, c in trips:
        if src not in idx or dst not in idx:
            unknown = src if src not in idx else dst
            raise ValidationError(f"trip references unknown region id {unknown!r}")
        if c < 0:
            raise ValidationError(f"negative trip count for {src!r}->{dst!r}: {c}")
        counts[idx[src], idx[dst]] += c
    A = row_normalize(counts)
    isolated = [regions.ids[i] for i in np.flatnonzero(counts.sum(axis=1) == 0)]
    return StaticGraph(
        kind="trans", A=A, region_ids=list(regions.ids), meta={"isolated_regions": isolated}
    )


def row_normalize(A: np.ndarray) -> np.ndarray:
    """Scale each row to sum 1; zero rows pass through unchanged."""
    A = np.asarray(A, dtype=float)
    if (A < 0).any():
        raise ValidationError("row_normalize requires nonnegative entries")
    deg = A.sum(axis=-1, keepdims=True)
    return np.where(deg > 0, A / np.where(deg > 0, deg, 1.0), 0.0)


# ---------------------------------------------------------------------------
# CSV plumbing


def load_regions(path) -> RegionTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"region_id", "lat", "lon"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: expected header region_id,lat,lon")
        ids, lat, lon = [], [], []
        for row in reader:
            ids.append(row["region_id"])
            try:
                lat.append(float(row["lat"]))
                lon.append(float(row["lon"]))
            except ValueError as e:
                raise ValidationError(f"{path}: bad coordinate for {row['region_id']!r}: {e}")
    return RegionTable(ids, np.array(lat), np.array(lon))


def load_trips(path) -> list[tuple[str, str, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"from", "to", "count"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: expected header from,to,count")
        trips = []
        for row in reader:
            try:
                trips.append((row["from"], row["to"], float(row["count"])))
            except ValueError as e:
                raise ValidationError(f"{path}: bad trip count: {e}")
    return trips


def export_graph_csv(graph: StaticGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region_id"] + list(graph.region_ids))
        for rid, row in zip(graph.region_ids, graph.A):
            writer.writerow([rid] + [repr(float(v)) for v in row])


def load_graph_csv(path, kind: str) -> StaticGraph:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "region_id":
        raise ValidationError(f"{path}: expected graph CSV with region_id header")
    ids = rows[0][1:]
    A = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    if A.shape != (len(ids), len(ids)) or [r[0] for r in rows[1:]] != ids:
        raise ValidationError(f"{path}: region ids in header and rows disagree")
    return StaticGraph(kind=kind, A=A, region_ids=ids)
