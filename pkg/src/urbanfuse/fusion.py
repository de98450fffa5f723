"""Early, late and hybrid fusion of feature blocks, out-of-fold stacking,
and exhaustive enumeration of fusion configurations.

Raw blocks enter a classifier as-is (early fusion); probability blocks
are replaced by class-probability features from a per-block classifier
(late fusion / stacking).  Training rows receive out-of-fold
probabilities, so no row is ever scored by a model that saw its label;
test rows are scored by a model trained on the full training split.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from urbanfuse.core import FeatureBlock, InvalidInputError, UrbanFuseError, derive_seed
from urbanfuse.classifiers import (
    GbdtModel,
    LogRegModel,
    predict_proba,
    train_gbdt,
    train_logreg,
)
from urbanfuse.metrics import F1Report, confusion, f1_report


class ConfigError(UrbanFuseError):
    """A fusion configuration references unknown blocks or is malformed."""


@dataclass(frozen=True)
class ClassifierConfig:
    kind: str = "logreg"  # "logreg" | "gbdt"
    params: dict = field(default_factory=dict)

    def train(self, X: np.ndarray, y: np.ndarray, class_labels: Sequence[str]):
        if self.kind == "logreg":
            return train_logreg(X, y, class_labels=class_labels, **self.params)
        if self.kind == "gbdt":
            return train_gbdt(X, y, class_labels=class_labels, **self.params)
        raise ConfigError(f"unknown classifier kind {self.kind!r}")

    def to_params(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_params(cls, params: dict) -> "ClassifierConfig":
        return cls(params["kind"], dict(params["params"]))


@dataclass(frozen=True)
class FusionConfig:
    """One fusion experiment: which blocks enter raw, which as OOF
    probabilities, and the classifier that consumes the result."""

    raw_blocks: tuple[str, ...]
    prob_blocks: tuple[str, ...]
    classifier: ClassifierConfig = ClassifierConfig()
    folds: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "raw_blocks", tuple(self.raw_blocks))
        object.__setattr__(self, "prob_blocks", tuple(self.prob_blocks))
        if set(self.raw_blocks) & set(self.prob_blocks):
            raise ConfigError("raw and probability block sets must be disjoint")
        if not self.raw_blocks and not self.prob_blocks:
            raise ConfigError("fusion config selects no blocks")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    def feature_names(self) -> list[str]:
        """Paper-style feature listing: raw names, then prob_<name>."""
        return list(self.raw_blocks) + [f"prob_{b}" for b in self.prob_blocks]


def early_fuse(blocks: Sequence[FeatureBlock], name: str = "early") -> FeatureBlock:
    """Column-wise concatenation of identically ordered blocks."""
    if not blocks:
        raise InvalidInputError("early_fuse needs at least one block")
    ids = blocks[0].report_ids
    for b in blocks[1:]:
        if b.report_ids != ids:
            raise InvalidInputError(
                f"blocks {blocks[0].name!r} and {b.name!r} have mismatched report id order"
            )
    matrix = np.concatenate([b.matrix for b in blocks], axis=1)
    columns = [f"{b.name}::{c}" for b in blocks for c in b.column_names]
    return FeatureBlock(name, "raw", ids, matrix, columns)


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Per-row fold assignment, stratified by class.

    Classes with fewer members than folds end up in only some folds; the
    assignment degrades gracefully with a warning.
    """
    y = np.asarray(y, dtype=np.int64)
    if folds < 2:
        raise InvalidInputError("folds must be >= 2")
    if folds > y.size:
        raise InvalidInputError(f"folds={folds} exceeds {y.size} rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    small: list[int] = []
    for cls in np.unique(y):
        rows = np.flatnonzero(y == cls)
        if rows.size < folds:
            small.append(int(cls))
        perm = rng.permutation(rows.size)
        for pos, j in enumerate(perm):
            fold_of[rows[j]] = pos % folds
    if small:
        warnings.warn(
            f"classes {small} have fewer members than folds={folds}; "
            "their rows cover only some folds",
            stacklevel=2,
        )
    return fold_of


def oof_probabilities(
    block: FeatureBlock,
    y_train: np.ndarray,
    classifier: ClassifierConfig,
    folds: int,
    seed: int,
    class_labels: Sequence[str],
    in_sample: bool = False,
):
    """Stacking features for one block.

    Returns (probability FeatureBlock for the training rows, model trained
    on the full training split for transforming unseen rows).  With
    ``in_sample=True`` the full-train model scores its own training rows
    instead (comparison mode; leaks label information by construction).
    """
    y_train = np.asarray(y_train, dtype=np.int64)
    if len(block) != y_train.size:
        raise InvalidInputError("block rows and labels differ in length")
    full_model = classifier.train(block.matrix, y_train, class_labels)
    if in_sample:
        probs = predict_proba(full_model, block.matrix)
    else:
        fold_of = stratified_folds(y_train, folds, seed)
        probs = np.zeros((y_train.size, len(class_labels)))
        for f in range(folds):
            holdout = fold_of == f
            if not holdout.any():
                continue
            model_f = classifier.train(
                block.matrix[~holdout], y_train[~holdout], class_labels
            )
            probs[holdout] = predict_proba(model_f, block.matrix[holdout])
    prob_block = FeatureBlock(
        f"prob_{block.name}", "probability", block.report_ids, probs, list(class_labels)
    )
    return prob_block, full_model


@dataclass
class HybridMatrices:
    train: FeatureBlock
    test: FeatureBlock
    stackers: dict[str, object]


def hybrid_fuse(
    config: FusionConfig,
    train_blocks: dict[str, FeatureBlock],
    test_blocks: dict[str, FeatureBlock],
    y_train: np.ndarray,
    seed: int,
    class_labels: Sequence[str],
    in_sample: bool = False,
    oof_cache: Optional[dict[str, tuple[FeatureBlock, FeatureBlock, object]]] = None,
) -> HybridMatrices:
    """Assemble train/test matrices for one fusion config.

    Raw blocks are concatenated as-is; probability blocks are replaced by
    out-of-fold probabilities (train side) and full-train-model
    probabilities (test side), in config order.
    """
    for name in (*config.raw_blocks, *config.prob_blocks):
        if name not in train_blocks or name not in test_blocks:
            raise ConfigError(f"unknown block {name!r} in fusion config")
    train_parts: list[FeatureBlock] = [train_blocks[n] for n in config.raw_blocks]
    test_parts: list[FeatureBlock] = [test_blocks[n] for n in config.raw_blocks]
    stackers: dict[str, object] = {}
    for name in config.prob_blocks:
        cached = oof_cache.get(name) if oof_cache is not None else None
        if cached is None:
            prob_train, model = oof_probabilities(
                train_blocks[name],
                y_train,
                config.classifier,
                config.folds,
                derive_seed(seed, f"oof:{name}"),
                class_labels,
                in_sample=in_sample,
            )
            test_probs = predict_proba(model, test_blocks[name].matrix)
            prob_test = FeatureBlock(
                f"prob_{name}",
                "probability",
                test_blocks[name].report_ids,
                test_probs,
                list(class_labels),
            )
            if oof_cache is not None:
                oof_cache[name] = (prob_train, prob_test, model)
        else:
            prob_train, prob_test, model = cached
        stackers[name] = model
        train_parts.append(prob_train)
        test_parts.append(prob_test)
    return HybridMatrices(
        train=early_fuse(train_parts, name="fused"),
        test=early_fuse(test_parts, name="fused"),
        stackers=stackers,
    )


@dataclass
class FusionResult:
    config: FusionConfig
    weighted_f1: float
    macro_f1: float
    micro_f1: float
    accuracy: float
    report: F1Report
    enum_index: int

    @property
    def n_blocks(self) -> int:
        return len(self.config.raw_blocks) + len(self.config.prob_blocks)


def enumerate_fusion_configs(
    blocks: dict[str, FeatureBlock],
    classifier: ClassifierConfig,
    folds: int = 5,
) -> list[tuple[int, FusionConfig]]:
    """All assignments of each block to absent / raw / prob, in a fixed
    mixed-radix order (first block most significant).

    Blocks that already hold probabilities are never re-stacked: they only
    take absent / raw.
    """
    names = list(blocks)
    options = [
        ("absent", "raw") if blocks[n].kind == "probability" else ("absent", "raw", "prob")
        for n in names
    ]
    configs: list[tuple[int, FusionConfig]] = []
    total = 1
    for opts in options:
        total *= len(opts)
    for code in range(total):
        rest = code
        assignment: list[str] = []
        for opts in reversed(options):
            assignment.append(opts[rest % len(opts)])
            rest //= len(opts)
        assignment.reverse()
        raw = tuple(n for n, a in zip(names, assignment) if a == "raw")
        prob = tuple(n for n, a in zip(names, assignment) if a == "prob")
        if not raw and not prob:
            continue
        configs.append(
            (code, FusionConfig(raw, prob, classifier=classifier, folds=folds))
        )
    return configs


def search_fusion(
    train_blocks: dict[str, FeatureBlock],
    test_blocks: dict[str, FeatureBlock],
    classifier: ClassifierConfig,
    y_train: np.ndarray,
    y_test: np.ndarray,
    class_labels: Sequence[str],
    budget: int = 729,
    seed: int = 0,
    folds: int = 5,
) -> list[FusionResult]:
    """Evaluate every fusion configuration (up to ``budget``, enumeration
    order) on the fixed split and rank by weighted F1.

    Ties rank configs with fewer blocks first, then by enumeration order.
    Test labels are consulted only for metric computation.
    """
    if budget < 1:
        raise InvalidInputError("budget must be >= 1")
    if not train_blocks:
        raise InvalidInputError("no blocks to search over")
    configs = enumerate_fusion_configs(train_blocks, classifier, folds)[:budget]
    oof_cache: dict[str, tuple[FeatureBlock, FeatureBlock, object]] = {}
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    results: list[FusionResult] = []
    for enum_index, config in configs:
        matrices = hybrid_fuse(
            config, train_blocks, test_blocks, y_train, seed, class_labels,
            oof_cache=oof_cache,
        )
        model = classifier.train(matrices.train.matrix, y_train, class_labels)
        y_pred = np.argmax(predict_proba(model, matrices.test.matrix), axis=1)
        report = f1_report(
            confusion(y_test, y_pred, len(class_labels), class_labels)
        )
        results.append(
            FusionResult(
                config=config,
                weighted_f1=report.weighted_f1,
                macro_f1=report.macro_f1,
                micro_f1=report.micro_f1,
                accuracy=report.accuracy,
                report=report,
                enum_index=enum_index,
            )
        )
    results.sort(key=lambda r: (-r.weighted_f1, r.n_blocks, r.enum_index))
    return results


def leaderboard_csv(results: Sequence[FusionResult], path=None) -> Optional[str]:
    """Leaderboard in classifier / features / F1 layout."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["classifier", "features", "weighted_f1"])
    for r in results:
        writer.writerow(
            [r.config.classifier.kind, ", ".join(r.config.feature_names()), repr(r.weighted_f1)]
        )
    text = buffer.getvalue()
    if path is None:
        return text
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return None


class FusionBundle:
    """A trained fusion pipeline: per-block stackers plus the meta model.

    Knows how to rebuild its input matrix from named blocks for any row
    set, so routing and evaluation can run on unseen reports.
    """

    model_type = "fusion_bundle"

    def __init__(
        self,
        config: FusionConfig,
        meta_model,
        stackers: dict[str, object],
        class_labels: Sequence[str],
    ):
        self.config = config
        self.meta_model = meta_model
        self.stackers = stackers
        self.class_labels = list(class_labels)

    def assemble(self, blocks: dict[str, FeatureBlock]) -> FeatureBlock:
        parts: list[FeatureBlock] = []
        for name in self.config.raw_blocks:
            if name not in blocks:
                raise ConfigError(f"missing block {name!r}")
            parts.append(blocks[name])
        for name in self.config.prob_blocks:
            if name not in blocks:
                raise ConfigError(f"missing block {name!r}")
            probs = predict_proba(self.stackers[name], blocks[name].matrix)
            parts.append(
                FeatureBlock(
                    f"prob_{name}",
                    "probability",
                    blocks[name].report_ids,
                    probs,
                    self.class_labels,
                )
            )
        return early_fuse(parts, name="fused")

    def predict_proba(self, blocks: dict[str, FeatureBlock]) -> np.ndarray:
        return predict_proba(self.meta_model, self.assemble(blocks).matrix)

    def to_params(self) -> dict:
        def pack(model) -> dict:
            return {"model_type": model.model_type, "params": model.to_params()}

        return {
            "raw_blocks": list(self.config.raw_blocks),
            "prob_blocks": list(self.config.prob_blocks),
            "classifier": self.config.classifier.to_params(),
            "folds": self.config.folds,
            "class_labels": self.class_labels,
            "meta_model": pack(self.meta_model),
            "stackers": {n: pack(m) for n, m in self.stackers.items()},
        }

    @classmethod
    def from_params(cls, params: dict) -> "FusionBundle":
        def unpack(packed: dict):
            factories = {"logreg": LogRegModel.from_params, "gbdt": GbdtModel.from_params}
            return factories[packed["model_type"]](packed["params"])

        config = FusionConfig(
            tuple(params["raw_blocks"]),
            tuple(params["prob_blocks"]),
            classifier=ClassifierConfig.from_params(params["classifier"]),
            folds=int(params["folds"]),
        )
        return cls(
            config,
            unpack(params["meta_model"]),
            {n: unpack(p) for n, p in params["stackers"].items()},
            list(params["class_labels"]),
        )


def fit_fusion(
    config: FusionConfig,
    train_blocks: dict[str, FeatureBlock],
    test_blocks: dict[str, FeatureBlock],
    y_train: np.ndarray,
    seed: int,
    class_labels: Sequence[str],
) -> tuple[FusionBundle, FeatureBlock]:
    """Train a full fusion pipeline; returns the bundle and the assembled
    test matrix (handy for immediate evaluation)."""
    matrices = hybrid_fuse(config, train_blocks, test_blocks, y_train, seed, class_labels)
    meta = config.classifier.train(
        matrices.train.matrix, np.asarray(y_train, dtype=np.int64), class_labels
    )
    bundle = FusionBundle(config, meta, matrices.stackers, class_labels)
    return bundle, matrices.test
