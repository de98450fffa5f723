"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

from datetime import datetime

import numpy as np
import pytest

from urbanfuse.core import Dataset, LabelTaxonomy, Report
from urbanfuse.geo import (
    ABSENT_TYPE_SENTINEL_M,
    DENSITY_RADII_M,
    PROXIMITY_KS,
    haversine_m_many,
)
from urbanfuse.ingest import GeoObject


def make_taxonomy(num_main: int = 2, num_issue: int = 4) -> LabelTaxonomy:
    mains = tuple(f"main_{i}" for i in range(num_main))
    issues = tuple(f"issue_{j}" for j in range(num_issue))
    return LabelTaxonomy(mains, issues, {f"issue_{j}": f"main_{j % num_main}" for j in range(num_issue)})


def make_report(
    rid: str,
    issue: int = 0,
    taxonomy: LabelTaxonomy | None = None,
    text: str = "some words here",
    lat: float = 52.0,
    lon: float = 5.0,
    ts: datetime | None = None,
    image_ref: str | None = None,
) -> Report:
    taxonomy = taxonomy or make_taxonomy()
    issue_name = taxonomy.issue_classes[issue]
    return Report(
        id=rid,
        text=text,
        timestamp=ts or datetime(2021, 6, 15, 14, 30),
        lat=lat,
        lon=lon,
        main_class=taxonomy.issue_to_main[issue_name],
        issue_class=issue_name,
        image_ref=image_ref,
    )


def make_dataset(n: int = 6, num_main: int = 2, num_issue: int = 4) -> Dataset:
    taxonomy = make_taxonomy(num_main, num_issue)
    reports = tuple(
        make_report(f"r{i}", issue=i % num_issue, taxonomy=taxonomy) for i in range(n)
    )
    return Dataset(reports, taxonomy)


def brute_force_point_features(
    objects: list[GeoObject], lat: float, lon: float
) -> np.ndarray:
    """O(n) per-type recomputation of the 8 geo features, type registry in
    first-appearance order.  Independent of the grid index."""
    types: list[str] = []
    for o in objects:
        if o.object_type not in types:
            types.append(o.object_type)
    row: list[float] = []
    for t in types:
        lats = np.array([o.lat for o in objects if o.object_type == t])
        lons = np.array([o.lon for o in objects if o.object_type == t])
        if lats.size == 0:
            row.extend([ABSENT_TYPE_SENTINEL_M] * 4 + [0.0] * 4)
            continue
        dists = haversine_m_many(lat, lon, lats, lons)
        order = np.lexsort((np.arange(dists.size), dists))
        sorted_d = dists[order]
        for k in PROXIMITY_KS:
            row.append(float(np.mean(sorted_d[: min(k, sorted_d.size)])))
        for r in DENSITY_RADII_M:
            row.append(float((dists <= r).sum()))
    return np.array(row)


@pytest.fixture
def small_dataset() -> Dataset:
    return make_dataset(8)
