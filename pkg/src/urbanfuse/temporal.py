"""One-hot time encodings and hourly weather joins."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from urbanfuse.core import Dataset, FeatureBlock, UrbanFuseError
from urbanfuse.ingest import WeatherRow

TIME_WIDTH = 12 + 7 + 24  # month, weekday (Monday=0), hour

TIME_COLUMNS = (
    [f"month_{m}" for m in range(1, 13)]
    + [f"weekday_{d}" for d in range(7)]
    + [f"hour_{h}" for h in range(24)]
)


class WeatherJoinError(UrbanFuseError):
    """One or more report hours are missing from the weather table."""


def time_block(dataset: Dataset) -> FeatureBlock:
    """Month / weekday / hour one-hots, exactly three ones per row.

    Weekday numbering follows Monday=0.
    """
    matrix = np.zeros((len(dataset), TIME_WIDTH))
    for i, r in enumerate(dataset.reports):
        ts = r.timestamp
        matrix[i, ts.month - 1] = 1.0
        matrix[i, 12 + ts.weekday()] = 1.0
        matrix[i, 19 + ts.hour] = 1.0
    return FeatureBlock("time", "raw", dataset.ids, matrix, TIME_COLUMNS)


def weather_block(dataset: Dataset, weather: Sequence[WeatherRow]) -> FeatureBlock:
    """Join each report to the weather row of its hour (no interpolation).

    Reports are truncated to the hour; a missing hour aborts the join with
    an error naming every absent hour.
    """
    by_hour = {w.timestamp: w for w in weather}
    columns = weather[0].column_names if weather else ()
    missing: list[str] = []
    matrix = np.zeros((len(dataset), len(columns)))
    for i, r in enumerate(dataset.reports):
        hour = r.timestamp.replace(minute=0, second=0, microsecond=0)
        row = by_hour.get(hour)
        if row is None:
            missing.append(hour.isoformat(timespec="minutes"))
            continue
        matrix[i] = row.values
    if missing:
        unique = sorted(set(missing))
        raise WeatherJoinError(
            f"{len(unique)} report hour(s) missing from weather table: "
            + ", ".join(unique[:20])
            + ("..." if len(unique) > 20 else "")
        )
    return FeatureBlock("weather", "raw", dataset.ids, matrix, list(columns))
