"""Shared domain types, dataset container, splitting and validation."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

BLOCK_KINDS = ("raw", "probability", "embedding")


class UrbanFuseError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(UrbanFuseError):
    """An operation received arguments that violate its preconditions."""


def derive_seed(root_seed: int, label: str) -> int:
    """Deterministically derive a child seed from a root seed and a stage label.

    All randomness in a pipeline run flows from one root seed; stages get
    independent streams by hashing their name into the root.
    """
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Report:
    """A single citizen report.

    ``main_class`` / ``issue_class`` are label strings resolved against a
    :class:`LabelTaxonomy`; ``image_ref`` is an optional key into a visual
    feature table.
    """

    id: str
    text: str
    timestamp: datetime
    lat: float
    lon: float
    main_class: str
    issue_class: str
    image_ref: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise InvalidInputError("report id must be non-empty")


@dataclass(frozen=True)
class LabelTaxonomy:
    """Ordered label sets and the total issue -> main mapping.

    The number of main classes is configurable, not fixed; datasets with
    seven or eight (or any other count of) main classes are all valid.
    """

    main_classes: tuple[str, ...]
    issue_classes: tuple[str, ...]
    issue_to_main: dict[str, str]

    def __post_init__(self) -> None:
        if len(set(self.main_classes)) != len(self.main_classes):
            raise InvalidInputError("duplicate main class names")
        if len(set(self.issue_classes)) != len(self.issue_classes):
            raise InvalidInputError("duplicate issue class names")
        mains = set(self.main_classes)
        for issue in self.issue_classes:
            main = self.issue_to_main.get(issue)
            if main is None:
                raise InvalidInputError(f"issue class {issue!r} has no main class")
            if main not in mains:
                raise InvalidInputError(
                    f"issue class {issue!r} maps to unknown main class {main!r}"
                )
        mapped = set(self.issue_to_main[i] for i in self.issue_classes)
        missing = mains - mapped
        if missing:
            raise InvalidInputError(
                f"main classes without any issue class: {sorted(missing)}"
            )

    def main_index(self, label: str) -> int:
        return self.main_classes.index(label)

    def issue_index(self, label: str) -> int:
        return self.issue_classes.index(label)

    def labels(self, level: str) -> tuple[str, ...]:
        if level == "main":
            return self.main_classes
        if level == "issue":
            return self.issue_classes
        raise InvalidInputError(f"unknown label level {level!r}")


class ReportContent(NamedTuple):
    """A label-stripped view of a report.

    Operations that must never consult labels (graph construction in
    particular) take sequences of these instead of full reports.
    """

    id: str
    text: str
    timestamp: datetime
    lat: float
    lon: float
    image_ref: Optional[str]


@dataclass(frozen=True)
class Dataset:
    """An ordered, immutable collection of reports plus their taxonomy."""

    reports: tuple[Report, ...]
    taxonomy: LabelTaxonomy

    def __post_init__(self) -> None:
        ids = [r.id for r in self.reports]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate report ids in dataset")

    def __len__(self) -> int:
        return len(self.reports)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.reports]

    def labels(self, level: str = "issue") -> np.ndarray:
        """Dense integer label indices in taxonomy order."""
        names = self.taxonomy.labels(level)
        index = {name: i for i, name in enumerate(names)}
        attr = "main_class" if level == "main" else "issue_class"
        try:
            return np.array([index[getattr(r, attr)] for r in self.reports], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"label {exc.args[0]!r} not in taxonomy") from exc

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.reports[i] for i in indices), self.taxonomy)

    def stripped(self) -> list[ReportContent]:
        """Label-free views, for label-blind consumers."""
        return [
            ReportContent(r.id, r.text, r.timestamp, r.lat, r.lon, r.image_ref)
            for r in self.reports
        ]


class FeatureBlock:
    """A named, typed, row-aligned matrix of per-report features.

    ``kind`` is one of ``raw``, ``probability`` or ``embedding``.
    Probability blocks must contain row-stochastic matrices.
    """

    def __init__(
        self,
        name: str,
        kind: str,
        report_ids: Sequence[str],
        matrix: np.ndarray,
        column_names: Sequence[str],
    ) -> None:
        if kind not in BLOCK_KINDS:
            raise InvalidInputError(f"unknown block kind {kind!r}")
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise InvalidInputError("feature matrix must be 2-dimensional")
        if matrix.shape[0] != len(report_ids):
            raise InvalidInputError(
                f"block {name!r}: {matrix.shape[0]} rows != {len(report_ids)} report ids"
            )
        if matrix.shape[1] != len(column_names):
            raise InvalidInputError(
                f"block {name!r}: {matrix.shape[1]} columns != {len(column_names)} names"
            )
        if matrix.size and not np.isfinite(matrix).all():
            raise InvalidInputError(f"block {name!r} contains non-finite values")
        if kind == "probability" and matrix.size:
            if (matrix < 0).any() or (matrix > 1).any():
                raise InvalidInputError(f"block {name!r}: probabilities outside [0, 1]")
            sums = matrix.sum(axis=1)
            if np.abs(sums - 1.0).max() > 1e-9:
                raise InvalidInputError(f"block {name!r}: probability rows do not sum to 1")
        self.name = name
        self.kind = kind
        self.report_ids = list(report_ids)
        self.matrix = matrix
        self.column_names = list(column_names)
        self._row_of = {rid: i for i, rid in enumerate(self.report_ids)}
        if len(self._row_of) != len(self.report_ids):
            raise InvalidInputError(f"block {name!r}: duplicate report ids")

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def take(self, ids: Sequence[str]) -> "FeatureBlock":
        """Row-select by report id, in the order given."""
        try:
            rows = [self._row_of[i] for i in ids]
        except KeyError as exc:
            raise InvalidInputError(
                f"block {self.name!r} has no row for report {exc.args[0]!r}"
            ) from exc
        return FeatureBlock(self.name, self.kind, list(ids), self.matrix[rows], self.column_names)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return (
            f"FeatureBlock(name={self.name!r}, kind={self.kind!r}, "
            f"shape={self.matrix.shape})"
        )


@dataclass(frozen=True)
class ValidationIssue:
    severity: str  # "error" | "warning"
    report_id: Optional[str]
    message: str


@dataclass
class ValidationReport:
    issues: list[ValidationIssue] = field(default_factory=list)

    @property
    def errors(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == "error"]

    @property
    def warnings(self) -> list[ValidationIssue]:
        return [i for i in self.issues if i.severity == "warning"]

    def ok(self) -> bool:
        return not self.errors


def validate_dataset(dataset: Dataset) -> ValidationReport:
    """Flag out-of-range coordinates, duplicate ids, unknown labels and
    reports with no usable text or image modality.

    Purely a reporting operation; never raises on bad data.
    """
    report = ValidationReport()
    seen: set[str] = set()
    taxonomy = dataset.taxonomy
    issue_set = set(taxonomy.issue_classes)
    main_set = set(taxonomy.main_classes)
    for r in dataset.reports:
        if r.id in seen:
            report.issues.append(ValidationIssue("error", r.id, f"duplicate report id {r.id!r}"))
        seen.add(r.id)
        if not -90.0 <= r.lat <= 90.0:
            report.issues.append(
                ValidationIssue("error", r.id, f"latitude {r.lat} outside [-90, 90]")
            )
        if not -180.0 <= r.lon <= 180.0:
            report.issues.append(
                ValidationIssue("error", r.id, f"longitude {r.lon} outside [-180, 180]")
            )
        if r.issue_class not in issue_set:
            report.issues.append(
                ValidationIssue("error", r.id, f"unknown issue class {r.issue_class!r}")
            )
        elif taxonomy.issue_to_main[r.issue_class] != r.main_class:
            report.issues.append(
                ValidationIssue(
                    "error",
                    r.id,
                    f"issue class {r.issue_class!r} does not belong to "
                    f"main class {r.main_class!r}",
                )
            )
        if r.main_class not in main_set:
            report.issues.append(
                ValidationIssue("error", r.id, f"unknown main class {r.main_class!r}")
            )
        if not r.text.strip() and r.image_ref is None:
            report.issues.append(
                ValidationIssue("warning", r.id, "report has neither text nor image")
            )
    return report


def _test_quotas(class_sizes: list[int], test_fraction: float, target: int) -> list[int]:
    """Per-class test-set seat allocation by largest remainder.

    Singleton classes get no seats; multi-member classes are capped at
    size - 1 so every stratifiable class keeps at least one train member.
    When the caps make the target unreachable the remaining seats are
    filled from the largest classes regardless of caps (degenerate inputs
    only).
    """
    n_classes = len(class_sizes)
    quotas = [0] * n_classes
    caps = [max(0, s - 1) if s >= 2 else 0 for s in class_sizes]
    remainders: list[tuple[float, int]] = []
    for c, size in enumerate(class_sizes):
        if size < 2:
            continue
        exact = test_fraction * size
        quotas[c] = min(int(exact), caps[c])
        remainders.append((exact - int(exact), c))
    seats = target - sum(quotas)
    # Highest fractional remainder first; ties by class index for determinism.
    remainders.sort(key=lambda t: (-t[0], t[1]))
    for _, c in remainders:
        if seats <= 0:
            break
        if quotas[c] < caps[c]:
            quotas[c] += 1
            seats -= 1
    if seats > 0:
        order = sorted(range(n_classes), key=lambda c: (-class_sizes[c], c))
        for c in order:
            while seats > 0 and quotas[c] < class_sizes[c]:
                quotas[c] += 1
                seats -= 1
    return quotas


def split_dataset(
    dataset: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Deterministic stratified train/test split.

    The test set has ``round(test_fraction * N)`` members, stratified by
    issue class where class sizes permit; classes with a single member go
    to the train side.
    """
    n = len(dataset)
    if n == 0:
        raise InvalidInputError("cannot split an empty dataset")
    if n < 2:
        raise InvalidInputError("dataset must contain at least 2 reports")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError("test_fraction must lie in (0, 1)")

    target = int(round(test_fraction * n))
    target = min(max(target, 0), n - 1)

    members: dict[str, list[int]] = {c: [] for c in dataset.taxonomy.issue_classes}
    for i, r in enumerate(dataset.reports):
        if r.issue_class not in members:
            raise InvalidInputError(f"report {r.id!r} has unknown issue class")
        members[r.issue_class].append(i)

    classes = list(dataset.taxonomy.issue_classes)
    sizes = [len(members[c]) for c in classes]
    quotas = _test_quotas(sizes, test_fraction, target)

    rng = np.random.default_rng(seed)
    test_indices: list[int] = []
    for c, quota in zip(classes, quotas):
        rows = members[c]
        if not rows:
            continue
        perm = rng.permutation(len(rows))
        test_indices.extend(rows[j] for j in perm[:quota])
    test_set = set(test_indices)
    train_rows = [i for i in range(n) if i not in test_set]
    test_rows = sorted(test_indices)
    return dataset.subset(train_rows), dataset.subset(test_rows)


def ensure_same_ids(blocks: Iterable[FeatureBlock]) -> list[str]:
    """Return the common report-id order of the blocks, or raise."""
    blocks = list(blocks)
    if not blocks:
        raise InvalidInputError("no feature blocks given")
    first = blocks[0].report_ids
    for b in blocks[1:]:
        if b.report_ids != first:
            raise InvalidInputError(
                f"blocks {blocks[0].name!r} and {b.name!r} have mismatched report id order"
            )
    return list(first)
