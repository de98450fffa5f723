"""Spatial grid index over geo objects and the proximity / density /
historical-profile feature blocks.

The index is a uniform grid (one per object type, ~200 m cells at the
data's latitude) whose query results are exact: every k-NN and radius
query returns precisely what a brute-force scan over the type's points
would.  Candidate cells are selected through bounding boxes derived from
the haversine formula itself, so no point within range can be missed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from urbanfuse.core import Dataset, FeatureBlock, InvalidInputError
from urbanfuse.ingest import GeoObject, HistoricalEvent

EARTH_RADIUS_M = 6_371_000.0
M_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0

#: Reported for all proximity features of an object type with no objects.
ABSENT_TYPE_SENTINEL_M = 20_000.0

PROXIMITY_KS = (1, 5, 10, 100)
DENSITY_RADII_M = (25.0, 50.0, 100.0, 200.0)

FEATURE_SUFFIXES = (
    "nearest_1",
    "mean_5",
    "mean_10",
    "mean_100",
    "count_25m",
    "count_50m",
    "count_100m",
    "count_200m",
)


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance in meters on a sphere of radius 6,371,000 m."""
    phi1 = math.radians(lat1)
    phi2 = math.radians(lat2)
    dphi = math.radians(lat2 - lat1)
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_m_many(lat: float, lon: float, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
    """Vectorized :func:`haversine_m` from one point to many."""
    phi1 = math.radians(lat)
    phi2 = np.radians(lats)
    dphi = np.radians(lats - lat)
    dlam = np.radians(lons - lon)
    a = np.sin(dphi / 2.0) ** 2 + math.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


class PointGridIndex:
    """Uniform-grid index over (lat, lon) points with exact queries.

    Cell size is fixed in meters; the longitudinal cell width is scaled by
    the cosine of the points' mean latitude.  Queries derive a conservative
    lat/lon bounding box for the search radius from the haversine formula,
    scan the overlapping cells (inflated by one cell on each side against
    rounding) and filter by exact distance, so results match a linear scan.
    """

    def __init__(self, lats: Sequence[float], lons: Sequence[float], cell_size_m: float = 200.0):
        self.lats = np.asarray(lats, dtype=np.float64)
        self.lons = np.asarray(lons, dtype=np.float64)
        if self.lats.shape != self.lons.shape or self.lats.ndim != 1:
            raise InvalidInputError("lats and lons must be equal-length 1-d sequences")
        self.n = self.lats.size
        self.cell_size_m = float(cell_size_m)
        self._cell_h_deg = self.cell_size_m / M_PER_DEG_LAT
        ref_lat = float(self.lats.mean()) if self.n else 0.0
        cos_ref = max(math.cos(math.radians(ref_lat)), 1e-9)
        self._cell_w_deg = self.cell_size_m / (M_PER_DEG_LAT * cos_ref)
        self._cells: dict[tuple[int, int], list[int]] = {}
        if self.n:
            ix = np.floor(self.lons / self._cell_w_deg).astype(np.int64)
            iy = np.floor(self.lats / self._cell_h_deg).astype(np.int64)
            for i in range(self.n):
                self._cells.setdefault((int(ix[i]), int(iy[i])), []).append(i)
            self._ix_range = (int(ix.min()), int(ix.max()))
            self._iy_range = (int(iy.min()), int(iy.max()))
        else:
            self._ix_range = (0, -1)
            self._iy_range = (0, -1)

    def __len__(self) -> int:
        return self.n

    def _lon_half_width_deg(self, lat: float, radius_m: float) -> float:
        """Max |delta lon| (degrees) a point within ``radius_m`` can have.

        Derived from the haversine formula:  a point p within distance r of
        q satisfies sin^2(dlam/2) * cos(phi_q) * cos(phi_p) <= sin^2(r/2R),
        with phi_p confined to phi_q +- r/R.
        """
        ang = radius_m / EARTH_RADIUS_M  # radians
        if ang >= math.pi:
            return 360.0
        phi_q = math.radians(lat)
        lo = max(-math.pi / 2.0, phi_q - ang)
        hi = min(math.pi / 2.0, phi_q + ang)
        cos_min = math.cos(max(abs(lo), abs(hi)))
        denom = math.cos(phi_q) * cos_min
        if denom <= 0.0:
            return 360.0
        s = math.sin(ang / 2.0) / math.sqrt(denom)
        if s >= 1.0:
            return 360.0
        return math.degrees(2.0 * math.asin(s))

    def _candidate_rows(self, lat: float, lon: float, radius_m: float) -> list[int]:
        if self.n == 0:
            return []
        dlat_deg = math.degrees(radius_m / EARTH_RADIUS_M)
        iy_lo = math.floor((lat - dlat_deg) / self._cell_h_deg) - 1
        iy_hi = math.floor((lat + dlat_deg) / self._cell_h_deg) + 1
        iy_lo = max(iy_lo, self._iy_range[0])
        iy_hi = min(iy_hi, self._iy_range[1])
        if iy_lo > iy_hi:
            return []
        dlon_deg = self._lon_half_width_deg(lat, radius_m)
        lon_spans = [(lon - dlon_deg, lon + dlon_deg)]
        if dlon_deg < 360.0:
            # Antimeridian wrap: include the mirrored interval when needed.
            if lon - dlon_deg < -180.0:
                lon_spans.append((lon - dlon_deg + 360.0, 180.0))
            if lon + dlon_deg > 180.0:
                lon_spans.append((-180.0, lon + dlon_deg - 360.0))
        cells = set()
        for span_lo, span_hi in lon_spans:
            ix_lo = max(math.floor(span_lo / self._cell_w_deg) - 1, self._ix_range[0])
            ix_hi = min(math.floor(span_hi / self._cell_w_deg) + 1, self._ix_range[1])
            for ix in range(ix_lo, ix_hi + 1):
                for iy in range(iy_lo, iy_hi + 1):
                    cells.add((ix, iy))
        rows: list[int] = []
        for cell in cells:
            rows.extend(self._cells.get(cell, ()))
        return rows

    def query_radius(self, lat: float, lon: float, radius_m: float) -> tuple[np.ndarray, np.ndarray]:
        """All points with distance <= radius, sorted by (distance, index)."""
        rows = self._candidate_rows(lat, lon, radius_m)
        if not rows:
            return np.empty(0, dtype=np.int64), np.empty(0)
        rows_arr = np.asarray(sorted(rows), dtype=np.int64)
        dists = haversine_m_many(lat, lon, self.lats[rows_arr], self.lons[rows_arr])
        keep = dists <= radius_m
        rows_arr, dists = rows_arr[keep], dists[keep]
        order = np.lexsort((rows_arr, dists))
        return rows_arr[order], dists[order]

    def query_knn(self, lat: float, lon: float, k: int) -> tuple[np.ndarray, np.ndarray]:
        """The min(k, n) nearest points, sorted by (distance, index).

        Radius-doubling search: once at least k points fall inside the
        current radius, every unscanned point is provably farther away.
        """
        if k < 1:
            raise InvalidInputError("k must be >= 1")
        if self.n == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        k = min(k, self.n)
        radius = self.cell_size_m
        max_radius = math.pi * EARTH_RADIUS_M
        while True:
            rows, dists = self.query_radius(lat, lon, radius)
            if rows.size >= k or radius >= max_radius:
                return rows[:k], dists[:k]
            radius *= 2.0


class SpatialIndex:
    """Per-object-type grid indexes plus a fixed type registry.

    The registry order (first appearance in the input) determines feature
    ordering and is frozen at build time.
    """

    def __init__(self, objects: Sequence[GeoObject], cell_size_m: float = 200.0):
        self.types: list[str] = []
        self._rows_by_type: dict[str, list[int]] = {}
        for i, obj in enumerate(objects):
            if obj.object_type not in self._rows_by_type:
                self.types.append(obj.object_type)
                self._rows_by_type[obj.object_type] = []
            self._rows_by_type[obj.object_type].append(i)
        self._objects = list(objects)
        self._index: dict[str, PointGridIndex] = {}
        self._orig: dict[str, np.ndarray] = {}
        for t in self.types:
            rows = self._rows_by_type[t]
            self._index[t] = PointGridIndex(
                [objects[i].lat for i in rows],
                [objects[i].lon for i in rows],
                cell_size_m,
            )
            self._orig[t] = np.asarray(rows, dtype=np.int64)

    def __contains__(self, object_type: str) -> bool:
        return object_type in self._index

    def count(self, object_type: str) -> int:
        return len(self._index[object_type]) if object_type in self._index else 0

    def knn(self, lat: float, lon: float, object_type: str, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(original object indices, distances) of the k nearest of a type."""
        if object_type not in self._index:
            return np.empty(0, dtype=np.int64), np.empty(0)
        local, dists = self._index[object_type].query_knn(lat, lon, k)
        return self._orig[object_type][local], dists

    def within(self, lat: float, lon: float, object_type: str, radius_m: float) -> tuple[np.ndarray, np.ndarray]:
        if object_type not in self._index:
            return np.empty(0, dtype=np.int64), np.empty(0)
        local, dists = self._index[object_type].query_radius(lat, lon, radius_m)
        return self._orig[object_type][local], dists

    def knn_all_types(self, lat: float, lon: float, k: int) -> list[tuple[float, int]]:
        """Global k nearest objects across every type, as (distance, index)."""
        candidates: list[tuple[float, int]] = []
        for t in self.types:
            idx, dists = self.knn(lat, lon, t, k)
            candidates.extend((float(d), int(i)) for d, i in zip(dists, idx))
        candidates.sort()
        return candidates[:k]

    def object(self, index: int) -> GeoObject:
        return self._objects[index]


def build_spatial_index(objects: Sequence[GeoObject], cell_size_m: float = 200.0) -> SpatialIndex:
    return SpatialIndex(objects, cell_size_m)


def proximity_features(
    index: SpatialIndex, lat: float, lon: float, object_type: str
) -> tuple[float, float, float, float]:
    """(nearest_1, mean_5, mean_10, mean_100) distances in meters.

    Means over fewer than k available objects use what exists; a type with
    no objects at all reports the 20 km sentinel in all four slots.
    """
    _, dists = index.knn(lat, lon, object_type, max(PROXIMITY_KS))
    if dists.size == 0:
        s = ABSENT_TYPE_SENTINEL_M
        return (s, s, s, s)
    return tuple(float(np.mean(dists[: min(k, dists.size)])) for k in PROXIMITY_KS)


def density_features(
    index: SpatialIndex, lat: float, lon: float, object_type: str
) -> tuple[int, int, int, int]:
    """Counts of objects within 25 / 50 / 100 / 200 m (inclusive)."""
    _, dists = index.within(lat, lon, object_type, max(DENSITY_RADII_M))
    return tuple(int((dists <= r).sum()) for r in DENSITY_RADII_M)


@dataclass(frozen=True)
class GeoFeatureSchema:
    """Ordered feature names: 8 per object type, in registry order."""

    types: tuple[str, ...]

    @property
    def feature_names(self) -> list[str]:
        return [f"{t}__{s}" for t in self.types for s in FEATURE_SUFFIXES]

    @property
    def width(self) -> int:
        return 8 * len(self.types)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["column", "object_type", "feature"])
            for t in self.types:
                for s in FEATURE_SUFFIXES:
                    writer.writerow([f"{t}__{s}", t, s])


def _point_features(index: SpatialIndex, lat: float, lon: float) -> list[float]:
    row: list[float] = []
    for t in index.types:
        row.extend(proximity_features(index, lat, lon, t))
        row.extend(float(c) for c in density_features(index, lat, lon, t))
    return row


def geo_block(dataset: Dataset, index: SpatialIndex, name: str = "geo") -> FeatureBlock:
    """Proximity + density features per report, width 8 x |types|."""
    schema = GeoFeatureSchema(tuple(index.types))
    matrix = np.zeros((len(dataset), schema.width))
    for i, r in enumerate(dataset.reports):
        if schema.width:
            matrix[i] = _point_features(index, r.lat, r.lon)
    return FeatureBlock(name, "raw", dataset.ids, matrix, schema.feature_names)


def historical_index(events: Sequence[HistoricalEvent], cell_size_m: float = 200.0) -> SpatialIndex:
    """A spatial index over past events, keyed by issue type.

    Event timestamps are ignored: the profile uses all available history.
    """
    objects = [GeoObject(e.issue_type, e.lat, e.lon) for e in events]
    return SpatialIndex(objects, cell_size_m)


def historical_block(
    dataset: Dataset, events: Sequence[HistoricalEvent], name: str = "geo_hist"
) -> FeatureBlock:
    """Same feature construction as :func:`geo_block`, over historical events."""
    return geo_block(dataset, historical_index(events), name=name)
