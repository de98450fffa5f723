"""Multinomial logistic regression, histogram gradient-boosted trees,
probability prediction and confidence-threshold routing.

Both trainers are deterministic.  The logistic trainer standardizes
features internally (constant columns are dropped) and minimizes mean
cross-entropy plus an L2 penalty by full-batch gradient descent with a
backtracking line search.  The boosted trainer fits one regression tree
per class per round to softmax gradient/hessian statistics accumulated on
per-feature histograms; split gain uses the second-order approximation
and leaves take the damped Newton value -G/(H+lambda).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from urbanfuse.core import InvalidInputError, UrbanFuseError


class ShapeError(UrbanFuseError):
    """Prediction input width does not match the training width."""


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _one_hot(y: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((y.size, num_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def _check_training_input(X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise InvalidInputError("X must be (n, f) and y must be (n,)")
    if X.shape[0] == 0:
        raise InvalidInputError("empty training set")
    if not np.isfinite(X).all():
        raise InvalidInputError("X contains non-finite values")
    if np.unique(y).size < 2:
        raise InvalidInputError("training labels contain fewer than 2 classes")


def logreg_loss_and_grad(
    W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray, l2: float
) -> tuple[float, np.ndarray, np.ndarray]:
    """Objective mean cross-entropy + (l2/2)*||W||^2 and its exact gradient.

    The bias is not penalized.
    """
    n = X.shape[0]
    logits = X @ W.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -(Y * log_probs).sum() / n + 0.5 * l2 * float((W * W).sum())
    P = np.exp(log_probs)
    diff = P - Y
    grad_w = diff.T @ X / n + l2 * W
    grad_b = diff.mean(axis=0)
    return float(loss), grad_w, grad_b


@dataclass
class LogRegModel:
    weights: np.ndarray  # (num_classes, num_kept_features)
    bias: np.ndarray  # (num_classes,)
    l2: float
    class_labels: list[str]
    mean: np.ndarray
    std: np.ndarray
    kept_columns: np.ndarray
    input_width: int
    objective_history: list[float] = field(default_factory=list)

    model_type = "logreg"

    def __post_init__(self) -> None:
        if len(self.class_labels) < 2:
            raise InvalidInputError("model needs at least 2 classes")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise InvalidInputError("model parameters must be finite")

    def _predict_proba(self, X: np.ndarray) -> np.ndarray:
        Xs = (X[:, self.kept_columns] - self.mean) / self.std
        return softmax(Xs @ self.weights.T + self.bias)

    def to_params(self) -> dict:
        return {
            "weights": [[float(v) for v in row] for row in self.weights],
            "bias": [float(v) for v in self.bias],
            "l2": float(self.l2),
            "class_labels": list(self.class_labels),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "kept_columns": [int(c) for c in self.kept_columns],
            "input_width": int(self.input_width),
        }

    @classmethod
    def from_params(cls, params: dict) -> "LogRegModel":
        return cls(
            weights=np.asarray(params["weights"], dtype=np.float64),
            bias=np.asarray(params["bias"], dtype=np.float64),
            l2=float(params["l2"]),
            class_labels=list(params["class_labels"]),
            mean=np.asarray(params["mean"], dtype=np.float64),
            std=np.asarray(params["std"], dtype=np.float64),
            kept_columns=np.asarray(params["kept_columns"], dtype=np.int64),
            input_width=int(params["input_width"]),
        )


def train_logreg(
    X: np.ndarray,
    y: np.ndarray,
    class_labels: Optional[Sequence[str]] = None,
    l2: float = 1e-3,
    max_iter: int = 200,
    tol: float = 1e-5,
) -> LogRegModel:
    """Fit multinomial logistic regression by full-batch descent with a
    backtracking line search.

    The cross-entropy part takes an explicit gradient step and the
    quadratic penalty an implicit one (the step divides by 1 + t*l2), so
    strong regularization cannot destroy the conditioning.  Stops when the
    full-objective gradient infinity norm drops below ``tol`` or after
    ``max_iter`` accepted steps; the objective decreases monotonically
    across accepted steps by the sufficient-decrease condition.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_input(X, y)
    if class_labels is None:
        class_labels = [f"class_{k}" for k in range(int(y.max()) + 1)]
    class_labels = list(class_labels)
    k = len(class_labels)
    if y.min() < 0 or y.max() >= k:
        raise InvalidInputError("labels out of range for class_labels")

    all_std = X.std(axis=0)
    kept = np.flatnonzero((X.max(axis=0) > X.min(axis=0)) & (all_std > 0.0))
    mean = X[:, kept].mean(axis=0)
    std = all_std[kept]
    Xs = (X[:, kept] - mean) / std

    Y = _one_hot(y, k)
    W = np.zeros((k, kept.size))
    b = np.zeros(k)
    loss, grad_w, grad_b = logreg_loss_and_grad(W, b, Xs, Y, l2)
    history = [loss]
    step = 1.0
    for _ in range(max_iter):
        g_inf = max(
            float(np.abs(grad_w).max()) if grad_w.size else 0.0,
            float(np.abs(grad_b).max()),
        )
        if g_inf < tol:
            break
        grad_w_data = grad_w - l2 * W  # cross-entropy part only
        step = min(step * 2.0, 1e6)
        accepted = False
        for _ in range(60):
            W_new = (W - step * grad_w_data) / (1.0 + step * l2)
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = logreg_loss_and_grad(W_new, b_new, Xs, Y, l2)
            move = float(((W_new - W) ** 2).sum() + ((b_new - b) ** 2).sum())
            if loss_new <= loss - 1e-4 * move / step:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        W, b, loss, grad_w, grad_b = W_new, b_new, loss_new, gw_new, gb_new
        history.append(loss)
    return LogRegModel(
        weights=W,
        bias=b,
        l2=l2,
        class_labels=class_labels,
        mean=mean,
        std=std,
        kept_columns=kept,
        input_width=X.shape[1],
        objective_history=history,
    )


# ---------------------------------------------------------------------------
# Gradient-boosted trees on feature histograms

@dataclass
class GbdtModel:
    trees: list[list[dict]]  # trees[round][class] -> nested node dict
    learning_rate: float
    max_depth: int
    rounds: int
    bin_edges: list[np.ndarray]
    class_labels: list[str]
    input_width: int
    train_losses: list[float] = field(default_factory=list)

    model_type = "gbdt"

    @property
    def num_trees(self) -> int:
        return sum(len(r) for r in self.trees)

    def _predict_logits(self, X: np.ndarray) -> np.ndarray:
        n = X.shape[0]
        k = len(self.class_labels)
        logits = np.zeros((n, k))
        for round_trees in self.trees:
            for cls, tree in enumerate(round_trees):
                logits[:, cls] += self.learning_rate * _tree_predict(tree, X)
        return logits

    def _predict_proba(self, X: np.ndarray) -> np.ndarray:
        return softmax(self._predict_logits(X))

    def to_params(self) -> dict:
        return {
            "trees": self.trees,
            "learning_rate": float(self.learning_rate),
            "max_depth": int(self.max_depth),
            "rounds": int(self.rounds),
            "bin_edges": [[float(v) for v in e] for e in self.bin_edges],
            "class_labels": list(self.class_labels),
            "input_width": int(self.input_width),
        }

    @classmethod
    def from_params(cls, params: dict) -> "GbdtModel":
        return cls(
            trees=params["trees"],
            learning_rate=float(params["learning_rate"]),
            max_depth=int(params["max_depth"]),
            rounds=int(params["rounds"]),
            bin_edges=[np.asarray(e, dtype=np.float64) for e in params["bin_edges"]],
            class_labels=list(params["class_labels"]),
            input_width=int(params["input_width"]),
        )


def _compute_bin_edges(X: np.ndarray, bins: int) -> list[np.ndarray]:
    """Per-feature split candidates: midpoints between distinct values when
    few, quantile cuts otherwise."""
    edges: list[np.ndarray] = []
    for f in range(X.shape[1]):
        uniq = np.unique(X[:, f])
        if uniq.size <= 1:
            edges.append(np.empty(0))
        elif uniq.size <= bins:
            edges.append((uniq[:-1] + uniq[1:]) / 2.0)
        else:
            qs = np.quantile(X[:, f], np.linspace(0.0, 1.0, bins + 1)[1:-1])
            edges.append(np.unique(qs))
    return edges


def _bin_matrix(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    binned = np.empty(X.shape, dtype=np.int64)
    for f, e in enumerate(edges):
        binned[:, f] = np.searchsorted(e, X[:, f], side="right")
    return binned


def _tree_predict(node: dict, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    _tree_predict_into(node, X, np.arange(X.shape[0]), out)
    return out


def _tree_predict_into(node: dict, X: np.ndarray, rows: np.ndarray, out: np.ndarray) -> None:
    if "v" in node:
        out[rows] = node["v"]
        return
    go_left = X[rows, node["f"]] < node["t"]
    _tree_predict_into(node["l"], X, rows[go_left], out)
    _tree_predict_into(node["r"], X, rows[~go_left], out)


def _build_tree(
    binned: np.ndarray,
    offsets: np.ndarray,
    bin_counts: np.ndarray,
    edges: list[np.ndarray],
    g: np.ndarray,
    h: np.ndarray,
    rows: np.ndarray,
    depth: int,
    max_depth: int,
    min_child_weight: float,
    reg_lambda: float,
) -> dict:
    g_sum = float(g[rows].sum())
    h_sum = float(h[rows].sum())
    leaf = {"v": -g_sum / (h_sum + reg_lambda)}
    if depth >= max_depth or rows.size < 2:
        return leaf

    n_features = binned.shape[1]
    flat = (binned[rows] + offsets).ravel()
    g_hist = np.bincount(flat, weights=np.repeat(g[rows], n_features), minlength=int(offsets[-1] + bin_counts[-1]))
    h_hist = np.bincount(flat, weights=np.repeat(h[rows], n_features), minlength=int(offsets[-1] + bin_counts[-1]))

    parent_score = g_sum * g_sum / (h_sum + reg_lambda)
    best_gain = 0.0
    best_feature = -1
    best_bin = -1
    for f in range(n_features):
        nb = int(bin_counts[f])
        if nb < 2:
            continue
        start = int(offsets[f])
        g_cum = np.cumsum(g_hist[start : start + nb])[:-1]
        h_cum = np.cumsum(h_hist[start : start + nb])[:-1]
        h_right = h_sum - h_cum
        valid = (h_cum >= min_child_weight) & (h_right >= min_child_weight)
        if not valid.any():
            continue
        g_right = g_sum - g_cum
        gains = 0.5 * (
            g_cum * g_cum / (h_cum + reg_lambda)
            + g_right * g_right / (h_right + reg_lambda)
            - parent_score
        )
        gains[~valid] = -np.inf
        b = int(np.argmax(gains))
        if gains[b] > best_gain + 1e-12:
            best_gain = float(gains[b])
            best_feature = f
            best_bin = b
    if best_feature < 0 or best_gain <= 1e-12:
        return leaf

    go_left = binned[rows, best_feature] <= best_bin
    left_rows = rows[go_left]
    right_rows = rows[~go_left]
    if left_rows.size == 0 or right_rows.size == 0:
        return leaf
    threshold = float(edges[best_feature][best_bin])
    return {
        "f": int(best_feature),
        "t": threshold,
        "l": _build_tree(
            binned, offsets, bin_counts, edges, g, h, left_rows,
            depth + 1, max_depth, min_child_weight, reg_lambda,
        ),
        "r": _build_tree(
            binned, offsets, bin_counts, edges, g, h, right_rows,
            depth + 1, max_depth, min_child_weight, reg_lambda,
        ),
    }


def train_gbdt(
    X: np.ndarray,
    y: np.ndarray,
    class_labels: Optional[Sequence[str]] = None,
    rounds: int = 100,
    max_depth: int = 6,
    learning_rate: float = 0.1,
    min_child_weight: float = 1.0,
    bins: int = 256,
    reg_lambda: float = 1.0,
) -> GbdtModel:
    """Boosted softmax trees: per round, per class, one regression tree fit
    to gradient/hessian histograms (g = p - y, h = p(1-p))."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_training_input(X, y)
    if rounds < 1 or max_depth < 1 or bins < 2:
        raise InvalidInputError("rounds >= 1, max_depth >= 1, bins >= 2 required")
    if class_labels is None:
        class_labels = [f"class_{k}" for k in range(int(y.max()) + 1)]
    class_labels = list(class_labels)
    k = len(class_labels)
    if y.min() < 0 or y.max() >= k:
        raise InvalidInputError("labels out of range for class_labels")

    edges = _compute_bin_edges(X, bins)
    binned = _bin_matrix(X, edges)
    bin_counts = np.array([e.size + 1 for e in edges], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(bin_counts)[:-1]))

    n = X.shape[0]
    Y = _one_hot(y, k)
    logits = np.zeros((n, k))
    all_rows = np.arange(n)
    trees: list[list[dict]] = []
    train_losses: list[float] = []
    for _ in range(rounds):
        P = softmax(logits)
        round_trees: list[dict] = []
        for cls in range(k):
            g = P[:, cls] - Y[:, cls]
            h = P[:, cls] * (1.0 - P[:, cls])
            tree = _build_tree(
                binned, offsets, bin_counts, edges, g, h, all_rows,
                0, max_depth, min_child_weight, reg_lambda,
            )
            round_trees.append(tree)
            logits[:, cls] += learning_rate * _tree_predict(tree, X)
        trees.append(round_trees)
        P = softmax(logits)
        train_losses.append(float(-np.log(P[all_rows, y]).mean()))
    return GbdtModel(
        trees=trees,
        learning_rate=learning_rate,
        max_depth=max_depth,
        rounds=rounds,
        bin_edges=edges,
        class_labels=class_labels,
        input_width=X.shape[1],
        train_losses=train_losses,
    )


Model = Union[LogRegModel, GbdtModel]


def predict_proba(model, X: np.ndarray) -> np.ndarray:
    """Class-probability matrix; rows sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    width = getattr(model, "input_width", None)
    if width is not None and X.shape[1] != width:
        raise ShapeError(f"expected {width} features, got {X.shape[1]}")
    return model._predict_proba(X)


@dataclass(frozen=True)
class RoutingDecision:
    """Auto-route with a class, or defer to a human expert."""

    kind: str  # "auto" | "defer"
    class_label: Optional[str]
    probability: float

    @property
    def is_auto(self) -> bool:
        return self.kind == "auto"


def route(model, x: np.ndarray, threshold: float) -> RoutingDecision:
    """Auto-classify when the top probability reaches the threshold
    (inclusive); otherwise defer.  Argmax ties break to the lowest index."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidInputError("threshold must lie in (0, 1]")
    probs = predict_proba(model, np.asarray(x, dtype=np.float64).reshape(1, -1))[0]
    top = int(np.argmax(probs))
    p = float(probs[top])
    if p >= threshold:
        return RoutingDecision("auto", model.class_labels[top], p)
    return RoutingDecision("defer", None, p)
