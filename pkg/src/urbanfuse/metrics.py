"""Confusion matrices, per-class precision/recall/F1 and the aggregate
scores (macro / micro / weighted F1, accuracy) used to compare classifiers."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from urbanfuse.core import InvalidInputError


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[t][p]: rows are true classes, columns predicted."""

    counts: np.ndarray
    class_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.class_labels)
        if counts.shape != (k, k):
            raise InvalidInputError("confusion matrix must be square over class labels")
        if (counts < 0).any():
            raise InvalidInputError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(
    y_true: Sequence[int],
    y_pred: Sequence[int],
    num_classes: int,
    class_labels: Optional[Sequence[str]] = None,
) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise InvalidInputError("y_true and y_pred must be equal-length 1-d arrays")
    if class_labels is None:
        class_labels = tuple(f"class_{k}" for k in range(num_classes))
    if len(class_labels) != num_classes:
        raise InvalidInputError("class_labels length must equal num_classes")
    if y_true.size:
        if y_true.min() < 0 or y_true.max() >= num_classes:
            raise InvalidInputError("y_true contains out-of-range class indices")
        if y_pred.min() < 0 or y_pred.max() >= num_classes:
            raise InvalidInputError("y_pred contains out-of-range class indices")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return ConfusionMatrix(counts, tuple(class_labels))


@dataclass(frozen=True)
class ClassMetrics:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class F1Report:
    per_class: tuple[ClassMetrics, ...]
    macro_f1: float
    micro_f1: float
    weighted_f1: float
    accuracy: float
    class_labels: tuple[str, ...]

    def f1_of(self, label: str) -> float:
        for m in self.per_class:
            if m.label == label:
                return m.f1
        raise InvalidInputError(f"unknown class {label!r}")


def f1_report(cm: ConfusionMatrix) -> F1Report:
    """Per-class and aggregate scores.

    F1 is 0 when precision + recall is 0.  Classes absent from the test
    set (zero support) are excluded from the macro and weighted averages.
    For single-label classification micro F1 equals accuracy, and is
    computed as such.
    """
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise InvalidInputError("confusion matrix is empty")
    tp = np.diag(counts).astype(np.float64)
    support = counts.sum(axis=1).astype(np.float64)
    predicted = counts.sum(axis=0).astype(np.float64)

    per_class: list[ClassMetrics] = []
    f1s = np.zeros(len(cm.class_labels))
    for c, label in enumerate(cm.class_labels):
        precision = tp[c] / predicted[c] if predicted[c] > 0 else 0.0
        recall = tp[c] / support[c] if support[c] > 0 else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s[c] = f1
        per_class.append(ClassMetrics(label, precision, recall, f1, int(support[c])))

    present = support > 0
    accuracy = float(tp.sum() / total)
    macro = float(f1s[present].mean())
    weighted = float((support[present] * f1s[present]).sum() / support[present].sum())
    return F1Report(
        per_class=tuple(per_class),
        macro_f1=macro,
        micro_f1=accuracy,
        weighted_f1=weighted,
        accuracy=accuracy,
        class_labels=cm.class_labels,
    )


@dataclass(frozen=True)
class PerClassTable:
    """Per-class F1 for several classifiers, sorted by descending support."""

    classifier_names: tuple[str, ...]
    rows: tuple[tuple[str, float, tuple[float, ...]], ...]  # (label, norm support, f1s)

    def to_csv(self, path=None) -> Optional[str]:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["class", "normalized_support", *self.classifier_names])
        for label, norm_support, f1s in self.rows:
            writer.writerow([label, repr(norm_support), *[repr(v) for v in f1s]])
        text = buffer.getvalue()
        if path is None:
            return text
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


def per_class_table(
    results: Sequence[tuple[str, F1Report]], top_k: Optional[int] = None
) -> PerClassTable:
    """Align several classifiers' per-class F1 over a shared taxonomy.

    Rows are sorted by support descending (ties by class order) with a
    normalized support column; ``top_k`` keeps the largest-support rows.
    """
    if not results:
        raise InvalidInputError("no results given")
    labels = results[0][1].class_labels
    for name, report in results[1:]:
        if report.class_labels != labels:
            raise InvalidInputError(f"result {name!r} uses a different taxonomy")
    supports = np.array([m.support for m in results[0][1].per_class], dtype=np.float64)
    for name, report in results[1:]:
        other = np.array([m.support for m in report.per_class], dtype=np.float64)
        if not np.array_equal(other, supports):
            raise InvalidInputError(f"result {name!r} evaluated on a different test set")
    total = supports.sum()
    if total <= 0:
        raise InvalidInputError("all classes have zero support")
    order = sorted(range(len(labels)), key=lambda c: (-supports[c], c))
    if top_k is not None:
        order = order[:top_k]
    rows = tuple(
        (
            labels[c],
            float(supports[c] / total),
            tuple(report.per_class[c].f1 for _, report in results),
        )
        for c in order
    )
    return PerClassTable(tuple(name for name, _ in results), rows)
