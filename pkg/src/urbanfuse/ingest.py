"""File formats: reports, geo objects, events, weather, visual features,
embeddings, models and feature-block artifacts.

Every loader is the inverse of the corresponding writer on valid data,
and no loader silently drops records.  Reports travel as JSON Lines with
a taxonomy sidecar; geo objects, historical events and weather as
headered CSV; visual features as JSON Lines; embeddings as TSV; models
as a versioned JSON container.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Optional, Union

import numpy as np

from urbanfuse.core import (
    Dataset,
    FeatureBlock,
    InvalidInputError,
    LabelTaxonomy,
    Report,
    UrbanFuseError,
)

MODEL_FORMAT_VERSION = 1
VISUAL_DIM = 2048

PathLike = Union[str, Path]


class FormatError(UrbanFuseError):
    """A file does not conform to its wire format."""


class VersionError(UrbanFuseError):
    """A model file was written with an unsupported format version."""


class CorruptModelError(UrbanFuseError):
    """A model file is truncated or otherwise unreadable."""


@dataclass(frozen=True)
class GeoObject:
    object_type: str
    lat: float
    lon: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        if not self.object_type:
            raise InvalidInputError("geo object type must be non-empty")
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise InvalidInputError(
                f"geo object coordinates ({self.lat}, {self.lon}) out of range"
            )


@dataclass(frozen=True)
class HistoricalEvent:
    issue_type: str
    lat: float
    lon: float
    timestamp: datetime

    def __post_init__(self) -> None:
        object.__setattr__(self, "lat", float(self.lat))
        object.__setattr__(self, "lon", float(self.lon))
        if not (-90.0 <= self.lat <= 90.0 and -180.0 <= self.lon <= 180.0):
            raise InvalidInputError(
                f"event coordinates ({self.lat}, {self.lon}) out of range"
            )


@dataclass(frozen=True)
class VisualFeatureEntry:
    """Precomputed deep visual features for one report's image.

    ``vector`` is the fixed-width penultimate-layer activation;
    ``concepts`` are (label, probability) pairs sorted by descending
    probability, at least two of them.
    """

    report_id: str
    vector: np.ndarray
    concepts: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.shape != (VISUAL_DIM,):
            raise FormatError(
                f"visual vector for {self.report_id!r} has width {vec.shape}, "
                f"expected {VISUAL_DIM}"
            )
        if not np.isfinite(vec).all():
            raise FormatError(f"visual vector for {self.report_id!r} is non-finite")
        object.__setattr__(self, "vector", vec)
        if len(self.concepts) < 2:
            raise FormatError(f"report {self.report_id!r} needs at least 2 concepts")
        probs = [p for _, p in self.concepts]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise FormatError(f"concept probability out of [0, 1] for {self.report_id!r}")
        if any(probs[i] < probs[i + 1] for i in range(len(probs) - 1)):
            raise FormatError(
                f"concepts for {self.report_id!r} are not sorted by descending probability"
            )


@dataclass(frozen=True)
class WeatherRow:
    timestamp: datetime  # truncated to the hour
    values: tuple[float, ...]
    column_names: tuple[str, ...]


def _format_ts(ts: datetime) -> str:
    return ts.isoformat(timespec="seconds")


def _parse_ts(text: str, where: str) -> datetime:
    try:
        return datetime.fromisoformat(text)
    except ValueError as exc:
        raise FormatError(f"{where}: bad timestamp {text!r}") from exc


# ---------------------------------------------------------------------------
# Reports (JSON Lines + taxonomy sidecar)

def taxonomy_sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".taxonomy.json")


def save_taxonomy(taxonomy: LabelTaxonomy, path: PathLike) -> None:
    payload = {
        "format_version": 1,
        "main_classes": list(taxonomy.main_classes),
        "issue_classes": list(taxonomy.issue_classes),
        "issue_to_main": dict(taxonomy.issue_to_main),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_taxonomy(path: PathLike) -> LabelTaxonomy:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return LabelTaxonomy(
        tuple(payload["main_classes"]),
        tuple(payload["issue_classes"]),
        dict(payload["issue_to_main"]),
    )


def save_reports(dataset: Dataset, path: PathLike) -> None:
    """Write one JSON object per report plus the taxonomy sidecar."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset.reports:
            record = {
                "id": r.id,
                "text": r.text,
                "timestamp": _format_ts(r.timestamp),
                "lat": r.lat,
                "lon": r.lon,
                "main_class": r.main_class,
                "issue_class": r.issue_class,
            }
            if r.image_ref is not None:
                record["image_ref"] = r.image_ref
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    save_taxonomy(dataset.taxonomy, taxonomy_sidecar_path(path))


def _derive_taxonomy(reports: list[Report]) -> LabelTaxonomy:
    mains: list[str] = []
    issues: list[str] = []
    mapping: dict[str, str] = {}
    for r in reports:
        if r.main_class not in mains:
            mains.append(r.main_class)
        if r.issue_class not in issues:
            issues.append(r.issue_class)
            mapping[r.issue_class] = r.main_class
        elif mapping[r.issue_class] != r.main_class:
            raise FormatError(
                f"issue class {r.issue_class!r} maps to both "
                f"{mapping[r.issue_class]!r} and {r.main_class!r}"
            )
    return LabelTaxonomy(tuple(mains), tuple(issues), mapping)


def load_reports(path: PathLike) -> Dataset:
    """Load a JSON Lines report file, preserving file order.

    The taxonomy comes from the ``.taxonomy.json`` sidecar when present
    and is otherwise derived from the labels in file order.
    """
    reports: list[Report] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON") from exc
            try:
                reports.append(
                    Report(
                        id=str(record["id"]),
                        text=str(record["text"]),
                        timestamp=_parse_ts(record["timestamp"], f"line {lineno}"),
                        lat=float(record["lat"]),
                        lon=float(record["lon"]),
                        main_class=str(record["main_class"]),
                        issue_class=str(record["issue_class"]),
                        image_ref=record.get("image_ref"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    sidecar = taxonomy_sidecar_path(path)
    if sidecar.exists():
        taxonomy = load_taxonomy(sidecar)
    else:
        taxonomy = _derive_taxonomy(reports)
    return Dataset(tuple(reports), taxonomy)


# ---------------------------------------------------------------------------
# Geo objects, historical events, weather (headered CSV)

def save_geo_objects(objects: list[GeoObject], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["object_type", "lat", "lon"])
        for o in objects:
            writer.writerow([o.object_type, repr(o.lat), repr(o.lon)])


def load_geo_objects(path: PathLike) -> list[GeoObject]:
    objects: list[GeoObject] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["object_type", "lat", "lon"]:
            raise FormatError(f"{path}: unexpected geo object header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}: line {lineno}: expected 3 fields")
            try:
                objects.append(GeoObject(row[0], float(row[1]), float(row[2])))
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return objects


def save_historical_events(events: list[HistoricalEvent], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["issue_type", "lat", "lon", "timestamp"])
        for e in events:
            writer.writerow([e.issue_type, repr(e.lat), repr(e.lon), _format_ts(e.timestamp)])


def load_historical_events(path: PathLike) -> list[HistoricalEvent]:
    events: list[HistoricalEvent] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["issue_type", "lat", "lon", "timestamp"]:
            raise FormatError(f"{path}: unexpected event header {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise FormatError(f"{path}: line {lineno}: expected 4 fields")
            try:
                events.append(
                    HistoricalEvent(
                        row[0], float(row[1]), float(row[2]),
                        _parse_ts(row[3], f"line {lineno}"),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return events


def save_weather(rows: list[WeatherRow], path: PathLike) -> None:
    if not rows:
        raise InvalidInputError("weather table must contain at least one row")
    columns = rows[0].column_names
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *columns])
        for r in rows:
            if r.column_names != columns:
                raise InvalidInputError("inconsistent weather columns")
            writer.writerow([_format_ts(r.timestamp), *[repr(float(v)) for v in r.values]])


def load_weather(path: PathLike) -> list[WeatherRow]:
    """Load an hourly weather table; duplicate hours are format errors."""
    rows: list[WeatherRow] = []
    seen: set[datetime] = set()
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or len(header) < 2:
            raise FormatError(f"{path}: weather header must be 'timestamp,<columns...>'")
        columns = tuple(header[1:])
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            ts = _parse_ts(row[0], f"line {lineno}")
            if ts.minute or ts.second or ts.microsecond:
                raise FormatError(
                    f"{path}: line {lineno}: timestamp {row[0]} not truncated to the hour"
                )
            if ts in seen:
                raise FormatError(f"{path}: duplicate weather hour {_format_ts(ts)}")
            seen.add(ts)
            try:
                values = tuple(float(v) for v in row[1:])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if not all(np.isfinite(values)):
                raise FormatError(f"{path}: line {lineno}: non-finite weather value")
            rows.append(WeatherRow(ts, values, columns))
    return rows


# ---------------------------------------------------------------------------
# Visual features (JSON Lines)

def save_visual_features(entries: dict[str, VisualFeatureEntry], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid in entries:
            e = entries[rid]
            record = {
                "report_id": e.report_id,
                "vector": [float(v) for v in e.vector],
                "concepts": [[label, float(p)] for label, p in e.concepts],
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")


def load_visual_features(path: PathLike) -> dict[str, VisualFeatureEntry]:
    """Load a visual feature table keyed by report id.

    Vectors of the wrong width and unsorted concept lists are rejected.
    """
    table: dict[str, VisualFeatureEntry] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}: line {lineno}: invalid JSON") from exc
            try:
                entry = VisualFeatureEntry(
                    report_id=str(record["report_id"]),
                    vector=np.asarray(record["vector"], dtype=np.float64),
                    concepts=tuple((str(l), float(p)) for l, p in record["concepts"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            except FormatError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if entry.report_id in table:
                raise FormatError(f"{path}: duplicate visual entry {entry.report_id!r}")
            table[entry.report_id] = entry
    return table


def visual_block(dataset: Dataset, table: dict[str, VisualFeatureEntry]) -> FeatureBlock:
    """Dense visual feature block; reports without an image get zero rows."""
    matrix = np.zeros((len(dataset), VISUAL_DIM))
    for i, r in enumerate(dataset.reports):
        if r.image_ref is not None and r.image_ref in table:
            matrix[i] = table[r.image_ref].vector
    names = [f"visual_{j}" for j in range(VISUAL_DIM)]
    return FeatureBlock("image", "raw", dataset.ids, matrix, names)


# ---------------------------------------------------------------------------
# Embeddings (TSV)

def save_embeddings(node_ids: list[str], matrix: np.ndarray, path: PathLike) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape[0] != len(node_ids):
        raise InvalidInputError("embedding row count != node id count")
    with open(path, "w", encoding="utf-8") as fh:
        for nid, row in zip(node_ids, matrix):
            fh.write(nid)
            for v in row:
                fh.write("\t")
                fh.write(repr(float(v)))
            fh.write("\n")


def load_embeddings(path: PathLike) -> tuple[list[str], np.ndarray]:
    node_ids: list[str] = []
    vectors: list[list[float]] = []
    width: Optional[int] = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"{path}: line {lineno}: expected node_id + values")
            if width is None:
                width = len(parts) - 1
            elif len(parts) - 1 != width:
                raise FormatError(f"{path}: line {lineno}: inconsistent vector width")
            node_ids.append(parts[0])
            try:
                vectors.append([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return node_ids, np.asarray(vectors, dtype=np.float64)


# ---------------------------------------------------------------------------
# Models (versioned JSON container)

def save_model(model: object, path: PathLike) -> None:
    """Persist any model with a ``to_params()`` / ``model_type`` surface.

    Parameters are portable JSON; floats round-trip exactly through
    Python's shortest-exact decimal representation.
    """
    to_params = getattr(model, "to_params", None)
    model_type = getattr(model, "model_type", None)
    if to_params is None or model_type is None:
        raise InvalidInputError(f"object {type(model).__name__} is not a saveable model")
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "model_type": model_type,
        "params": to_params(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: PathLike) -> object:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: truncated or corrupt model file") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptModelError(f"{path}: missing format header")
    version = payload["format_version"]
    if version != MODEL_FORMAT_VERSION:
        raise VersionError(
            f"{path}: format version {version} unsupported "
            f"(expected {MODEL_FORMAT_VERSION})"
        )
    model_type = payload.get("model_type")
    from urbanfuse import classifiers, fusion, text

    factories = {
        "logreg": classifiers.LogRegModel.from_params,
        "gbdt": classifiers.GbdtModel.from_params,
        "tfidf": text.TfidfModel.from_params,
        "wordvec": text.WordVectors.from_params,
        "fusion_bundle": fusion.FusionBundle.from_params,
    }
    factory = factories.get(model_type)
    if factory is None:
        raise VersionError(f"{path}: unknown model type {model_type!r}")
    return factory(payload["params"])


# ---------------------------------------------------------------------------
# Feature-block artifacts (manifest JSON + one .npy per block)

def save_feature_blocks(blocks: list[FeatureBlock], directory: PathLike) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict[str, object] = {"format_version": 1, "blocks": {}}
    for block in blocks:
        fname = f"{block.name}.npy"
        np.save(directory / fname, block.matrix)
        manifest["blocks"][block.name] = {
            "kind": block.kind,
            "file": fname,
            "report_ids": block.report_ids,
            "column_names": block.column_names,
        }
    with open(directory / "blocks.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True)
        fh.write("\n")


def load_feature_blocks(directory: PathLike) -> dict[str, FeatureBlock]:
    directory = Path(directory)
    manifest_path = directory / "blocks.json"
    if not manifest_path.exists():
        raise FormatError(f"no feature block manifest at {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    blocks: dict[str, FeatureBlock] = {}
    for name, meta in manifest["blocks"].items():
        matrix = np.load(directory / meta["file"])
        blocks[name] = FeatureBlock(
            name, meta["kind"], meta["report_ids"], matrix, meta["column_names"]
        )
    return blocks


def require_artifact(path: PathLike, produced_by: str) -> Path:
    """Fail with a stage-ordering hint when an upstream artifact is missing."""
    path = Path(path)
    if not path.exists():
        raise UrbanFuseError(
            f"missing artifact {path}: run stage {produced_by!r} first"
        )
    return path
