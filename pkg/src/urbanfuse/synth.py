"""Synthetic citizen-report generator with planted per-modality signal.

Each class's identity is distributed over the modalities according to
configurable informativeness weights: a report reveals its class through
a modality only when that modality "fires" (an independent Bernoulli draw
per modality).  A fired modality carries a clean class signature
(class-specific words, a class-specific visual Gaussian mean and concept
labels, a class-specific spatial cluster with class-typical geo objects,
or a class-specific hour/weekday); an unfired modality is drawn from a
shared, uninformative background.  Because the fires are independent,
whenever every weight is at most 0.5 the best achievable accuracy of any
single modality stays strictly below that of all modalities combined.

Weather is seasonal sinusoids plus noise, independent of the labels, so
weather features are plausibly scaled but carry no signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta
from typing import Optional

import numpy as np

from urbanfuse.core import Dataset, InvalidInputError, LabelTaxonomy, Report
from urbanfuse.ingest import (
    VISUAL_DIM,
    GeoObject,
    HistoricalEvent,
    VisualFeatureEntry,
    WeatherRow,
)

CITY_CENTER = (52.0, 5.0)
CITY_HALF_EXTENT_DEG = 0.05
DEG_PER_M_LAT = 1.0 / 111_194.9266

WEATHER_COLUMNS = (
    "temperature_c",
    "feels_like_c",
    "dew_point_c",
    "humidity_pct",
    "pressure_hpa",
    "wind_speed_ms",
    "wind_gust_ms",
    "wind_dir_deg",
    "cloud_cover_pct",
    "visibility_km",
    "rain_mm",
    "snow_mm",
    "snow_depth_cm",
    "sunshine_min",
    "radiation_wm2",
    "uv_index",
    "fog",
    "thunder",
)


@dataclass(frozen=True)
class SynthConfig:
    num_reports: int
    num_issue_classes: int = 8
    num_main_classes: int = 8
    text_weight: float = 0.4
    visual_weight: float = 0.4
    geo_weight: float = 0.4
    time_weight: float = 0.4
    common_words: int = 40
    signal_words_per_class: int = 4
    geo_objects_per_class: int = 20
    background_objects: int = 60
    events_per_class: int = 15
    label_noise: float = 0.0
    priors: Optional[tuple[float, ...]] = None
    year: int = 2021
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_reports < self.num_issue_classes:
            raise InvalidInputError("num_reports must be >= num_issue_classes")
        if self.num_main_classes < 1 or self.num_issue_classes < self.num_main_classes:
            raise InvalidInputError("need 1 <= num_main_classes <= num_issue_classes")
        for w in (self.text_weight, self.visual_weight, self.geo_weight, self.time_weight):
            if not 0.0 <= w <= 1.0:
                raise InvalidInputError("modality weights must lie in [0, 1]")
        if not 0.0 <= self.label_noise < 1.0:
            raise InvalidInputError("label_noise must lie in [0, 1)")
        if self.priors is not None:
            if len(self.priors) != self.num_issue_classes:
                raise InvalidInputError("priors length must equal num_issue_classes")
            if abs(sum(self.priors) - 1.0) > 1e-9 or min(self.priors) < 0:
                raise InvalidInputError("priors must be a distribution")


@dataclass
class SynthData:
    dataset: Dataset
    geo_objects: list[GeoObject]
    events: list[HistoricalEvent]
    weather: list[WeatherRow]
    visual: dict[str, VisualFeatureEntry]


def _alpha(n: int) -> str:
    """Letters-only index encoding (tokenizer-safe: no digits)."""
    letters = "abcdefghijklmnopqrstuvwxyz"
    out = letters[n % 26]
    n //= 26
    while n:
        out = letters[n % 26] + out
        n //= 26
    return out


def _taxonomy(config: SynthConfig) -> LabelTaxonomy:
    mains = tuple(f"main_{i}" for i in range(config.num_main_classes))
    issues = tuple(f"issue_{j}" for j in range(config.num_issue_classes))
    mapping = {f"issue_{j}": f"main_{j % config.num_main_classes}"
               for j in range(config.num_issue_classes)}
    return LabelTaxonomy(mains, issues, mapping)


def _weather_table(config: SynthConfig, rng: np.random.Generator) -> list[WeatherRow]:
    start = datetime(config.year, 1, 1)
    end = datetime(config.year + 1, 1, 1)
    hours = int((end - start).total_seconds() // 3600)
    t = np.arange(hours, dtype=np.float64)
    day_phase = 2.0 * math.pi * (t % 24.0) / 24.0
    year_phase = 2.0 * math.pi * t / (365.0 * 24.0)
    temp = 10.0 - 8.0 * np.cos(year_phase) + 4.0 * np.sin(day_phase - 1.0)
    temp += rng.normal(0.0, 1.0, hours)
    wind = np.clip(4.0 + 2.0 * np.sin(year_phase * 2.0) + rng.normal(0, 1.5, hours), 0, None)
    rain = np.clip(rng.normal(0.1, 0.5, hours), 0, None)
    snow = np.where(temp < 0.0, np.clip(rng.normal(0.1, 0.3, hours), 0, None), 0.0)
    cloud = np.clip(50.0 + 30.0 * np.sin(year_phase * 3.0) + rng.normal(0, 15, hours), 0, 100)
    humidity = np.clip(75.0 - 0.8 * (temp - 10.0) + rng.normal(0, 5, hours), 5, 100)
    pressure = 1013.0 + 8.0 * np.sin(year_phase * 5.0) + rng.normal(0, 3, hours)
    sun_up = np.maximum(0.0, np.sin(day_phase - math.pi / 2.0))
    radiation = 600.0 * sun_up * (1.0 - cloud / 150.0)
    columns = WEATHER_COLUMNS
    values = np.column_stack([
        temp,
        temp - 0.3 * wind,
        temp - (100.0 - humidity) / 5.0,
        humidity,
        pressure,
        wind,
        wind * 1.6 + rng.normal(0, 0.5, hours),
        rng.uniform(0, 360, hours),
        cloud,
        np.clip(30.0 - cloud / 5.0 + rng.normal(0, 2, hours), 0.1, None),
        rain,
        snow,
        np.maximum(0.0, np.cumsum(snow) * 0.01 - t * 0.001),
        60.0 * sun_up * (1.0 - cloud / 120.0),
        radiation,
        np.clip(radiation / 100.0, 0, 11),
        (humidity > 97.0).astype(np.float64),
        ((rain > 1.2) & (temp > 15.0)).astype(np.float64),
    ])
    return [
        WeatherRow(start + timedelta(hours=int(i)), tuple(float(v) for v in values[i]), columns)
        for i in range(hours)
    ]


def generate(config: SynthConfig) -> SynthData:
    """Generate a dataset plus every companion table, deterministically.

    All randomness flows from ``config.seed`` through a single generator
    in a fixed draw order, so equal configs produce identical output.
    """
    rng = np.random.default_rng(config.seed)
    taxonomy = _taxonomy(config)
    k = config.num_issue_classes
    priors = np.asarray(
        config.priors if config.priors is not None else [1.0 / k] * k, dtype=np.float64
    )

    lat0, lon0 = CITY_CENTER
    half = CITY_HALF_EXTENT_DEG
    margin = 0.2 * half
    centers = np.column_stack([
        rng.uniform(lat0 - half + margin, lat0 + half - margin, k),
        rng.uniform(lon0 - half + margin, lon0 + half - margin, k),
    ])
    visual_means = rng.normal(0.0, 1.0, (k, VISUAL_DIM))
    visual_means *= 4.0 / np.linalg.norm(visual_means, axis=1, keepdims=True)
    signal_words = [
        [f"sig{_alpha(j)}{_alpha(s)}" for s in range(config.signal_words_per_class)]
        for j in range(k)
    ]
    common_words = [f"common{_alpha(c)}" for c in range(config.common_words)]

    geo_objects: list[GeoObject] = []
    sigma_obj = 25.0 * DEG_PER_M_LAT
    for j in range(k):
        for _ in range(config.geo_objects_per_class):
            dlat, dlon = rng.normal(0.0, sigma_obj, 2)
            geo_objects.append(GeoObject(f"poi_{j}", centers[j, 0] + dlat, centers[j, 1] + dlon))
    for _ in range(config.background_objects):
        geo_objects.append(
            GeoObject(
                "tree",
                rng.uniform(lat0 - half, lat0 + half),
                rng.uniform(lon0 - half, lon0 + half),
            )
        )

    events: list[HistoricalEvent] = []
    sigma_evt = 30.0 * DEG_PER_M_LAT
    event_year_start = datetime(config.year - 1, 1, 1)
    for j in range(k):
        for _ in range(config.events_per_class):
            dlat, dlon = rng.normal(0.0, sigma_evt, 2)
            ts = event_year_start + timedelta(
                days=int(rng.integers(0, 365)), hours=int(rng.integers(0, 24))
            )
            events.append(
                HistoricalEvent(f"issue_{j}", centers[j, 0] + dlat, centers[j, 1] + dlon, ts)
            )

    weather = _weather_table(config, rng)

    first_monday = datetime(config.year, 1, 1)
    while first_monday.weekday() != 0:
        first_monday += timedelta(days=1)
    max_week = (datetime(config.year, 12, 25) - first_monday).days // 7

    reports: list[Report] = []
    visual: dict[str, VisualFeatureEntry] = {}
    for i in range(config.num_reports):
        j = int(rng.choice(k, p=priors))
        fire_text = rng.random() < config.text_weight
        fire_visual = rng.random() < config.visual_weight
        fire_geo = rng.random() < config.geo_weight
        fire_time = rng.random() < config.time_weight

        n_common = int(rng.integers(2, 5))
        tokens = [common_words[int(c)] for c in rng.integers(0, len(common_words), n_common)]
        if fire_text:
            picks = rng.integers(0, len(signal_words[j]), 3)
            tokens = [signal_words[j][int(p)] for p in picks] + tokens
        text = " ".join(tokens)

        if fire_geo:
            dlat, dlon = rng.normal(0.0, 15.0 * DEG_PER_M_LAT, 2)
            lat, lon = centers[j, 0] + dlat, centers[j, 1] + dlon
        else:
            lat = rng.uniform(lat0 - half, lat0 + half)
            lon = rng.uniform(lon0 - half, lon0 + half)

        if fire_time:
            week = int(rng.integers(0, max_week + 1))
            day = first_monday + timedelta(weeks=week, days=j % 7)
            ts = day.replace(hour=(3 * j) % 24, minute=int(rng.integers(0, 60)))
        else:
            ts = datetime(config.year, 1, 1) + timedelta(
                days=int(rng.integers(0, 365)),
                hours=int(rng.integers(0, 24)),
                minutes=int(rng.integers(0, 60)),
            )

        noise_vec = rng.normal(0.0, 1.0, VISUAL_DIM)
        vector = visual_means[j] + noise_vec if fire_visual else noise_vec
        if fire_visual:
            p1 = 0.55 + 0.35 * rng.random()
            p2 = (1.0 - p1) * rng.random() * 0.8
            concepts = ((f"marker_{j}", float(p1)), ("object_misc", float(p2)))
        else:
            p1 = 0.25 + 0.25 * rng.random()
            p2 = p1 * rng.random() * 0.9
            concepts = (("object_misc", float(p1)), ("thing_misc", float(p2)))

        # Noise draws happen unconditionally so that label_noise changes
        # labels only, never the rest of the random stream.
        flip = rng.random() < config.label_noise
        other = int(rng.integers(0, max(k - 1, 1)))
        label = int((j + 1 + other) % k) if flip and k > 1 else j

        rid = f"r{i:06d}"
        issue = taxonomy.issue_classes[label]
        reports.append(
            Report(
                id=rid,
                text=text,
                timestamp=ts,
                lat=float(lat),
                lon=float(lon),
                main_class=taxonomy.issue_to_main[issue],
                issue_class=issue,
                image_ref=rid,
            )
        )
        visual[rid] = VisualFeatureEntry(rid, vector, concepts)

    dataset = Dataset(tuple(reports), taxonomy)
    return SynthData(dataset, geo_objects, events, weather, visual)
