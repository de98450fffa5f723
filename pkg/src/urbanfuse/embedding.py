"""Biased second-order random walks plus skip-gram training with negative
sampling, producing node representations and the report embedding block.

The walk bias follows the usual return / in-out scheme: from ``curr``
with predecessor ``prev``, a neighbor ``x`` scores ``w(curr, x) * alpha``
where alpha is 1/p when x == prev, 1 when x is adjacent to prev, and 1/q
otherwise.  Each walk draws from its own counter-derived generator, so
walks are reproducible independently of execution order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from urbanfuse.core import Dataset, FeatureBlock, InvalidInputError, UrbanFuseError
from urbanfuse.graph import MultimodalGraph, report_node


class DeadEndError(UrbanFuseError):
    """A transition was requested from a node with no neighbors."""


@dataclass(frozen=True)
class WalkConfig:
    p: float = 1.0
    q: float = 1.0
    walks_per_node: int = 10
    walk_length: int = 80
    seed: int = 0

    def __post_init__(self) -> None:
        if self.p <= 0.0 or self.q <= 0.0:
            raise InvalidInputError("p and q must be positive")
        if self.walks_per_node < 1:
            raise InvalidInputError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise InvalidInputError("walk_length must be >= 2")


class _GraphView:
    """Frozen adjacency arrays for fast repeated sampling."""

    def __init__(self, graph: MultimodalGraph):
        adjacency = graph.adjacency()
        self.nbrs: dict[str, tuple[str, ...]] = {}
        self.weights: dict[str, np.ndarray] = {}
        self.cumweights: dict[str, np.ndarray] = {}
        self.nbr_sets: dict[str, frozenset[str]] = {}
        for node, (nbrs, weights) in adjacency.items():
            self.nbrs[node] = nbrs
            self.weights[node] = weights
            self.cumweights[node] = np.cumsum(weights)
            self.nbr_sets[node] = frozenset(nbrs)

    def biased_scores(self, prev: str, curr: str, p: float, q: float) -> tuple[tuple[str, ...], np.ndarray]:
        nbrs = self.nbrs[curr]
        weights = self.weights[curr]
        prev_set = self.nbr_sets[prev]
        scores = weights.copy()
        for i, x in enumerate(nbrs):
            if x == prev:
                scores[i] = weights[i] / p
            elif x not in prev_set:
                scores[i] = weights[i] / q
        return nbrs, scores


def transition_distribution(
    graph: MultimodalGraph, prev: str, curr: str, p: float, q: float
) -> tuple[list[str], np.ndarray]:
    """Exact next-step distribution over the neighbors of ``curr``.

    Returns (sorted neighbor ids, probabilities summing to 1).
    """
    if p <= 0.0 or q <= 0.0:
        raise InvalidInputError("p and q must be positive")
    nbr_weights = graph.neighbors(curr)
    if not nbr_weights:
        raise DeadEndError(f"node {curr!r} has no neighbors")
    prev_nbrs = {v for v, _ in graph.neighbors(prev)}
    if curr not in prev_nbrs:
        raise InvalidInputError(f"{prev!r} is not adjacent to {curr!r}")
    nbrs = [v for v, _ in nbr_weights]
    scores = np.empty(len(nbrs))
    for i, (x, w) in enumerate(nbr_weights):
        if x == prev:
            scores[i] = w / p
        elif x in prev_nbrs:
            scores[i] = w
        else:
            scores[i] = w / q
    return nbrs, scores / scores.sum()


def _draw(nbrs: tuple[str, ...], scores: np.ndarray, rng: np.random.Generator) -> str:
    cum = np.cumsum(scores)
    r = rng.random() * cum[-1]
    idx = int(np.searchsorted(cum, r, side="right"))
    return nbrs[min(idx, len(nbrs) - 1)]


def sample_next(
    graph: MultimodalGraph, prev: str, curr: str, p: float, q: float, rng: np.random.Generator
) -> str:
    """Sample one biased step; distributed exactly as transition_distribution."""
    nbrs, probs = transition_distribution(graph, prev, curr, p, q)
    return _draw(tuple(nbrs), probs, rng)


def _walk_rng(seed: int, node_index: int, walk_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(node_index, walk_index))
    return np.random.Generator(np.random.PCG64(ss))


def generate_walks(graph: MultimodalGraph, config: WalkConfig) -> list[list[str]]:
    """walks_per_node walks from every node, in node-id order.

    The first step is drawn proportionally to edge weights; later steps
    use the second-order bias.  Dead ends truncate a walk.
    """
    if graph.num_nodes() == 0:
        raise InvalidInputError("graph is empty")
    view = _GraphView(graph)
    nodes = sorted(graph.node_ids)
    walks: list[list[str]] = []
    for ni, start in enumerate(nodes):
        for wi in range(config.walks_per_node):
            rng = _walk_rng(config.seed, ni, wi)
            walk = [start]
            if not view.nbrs[start]:
                walks.append(walk)
                continue
            curr = _draw(view.nbrs[start], view.weights[start], rng)
            walk.append(curr)
            while len(walk) < config.walk_length:
                prev = walk[-2]
                if not view.nbrs[curr]:
                    break
                nbrs, scores = view.biased_scores(prev, curr, config.p, config.q)
                curr = _draw(nbrs, scores, rng)
                walk.append(curr)
            walks.append(walk)
    return walks


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pair_loss_and_grad(
    u: np.ndarray, v: np.ndarray, negs: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and exact gradients for one (center, context, negatives) triple.

    loss = -ln sigma(u.v) - sum_i ln sigma(-u.n_i); gradients returned for
    u, v and each negative row.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64).reshape(-1, u.size)
    pos_score = float(u @ v)
    neg_scores = negs @ u
    loss = float(np.logaddexp(0.0, -pos_score) + np.logaddexp(0.0, neg_scores).sum())
    g_pos = _sigmoid(np.array([pos_score]))[0] - 1.0
    g_neg = _sigmoid(neg_scores)
    du = g_pos * v + g_neg @ negs
    dv = g_pos * u
    dnegs = g_neg[:, None] * u[None, :]
    return loss, du, dv, dnegs


@dataclass
class NodeEmbeddings:
    """Trained vectors, one row per node id (input-side embeddings)."""

    node_ids: list[str]
    matrix: np.ndarray
    dims: int
    epoch_losses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.matrix.shape != (len(self.node_ids), self.dims):
            raise InvalidInputError("embedding matrix shape mismatch")
        if self.matrix.size and not np.isfinite(self.matrix).all():
            raise InvalidInputError("embeddings must be finite")
        self._index = {n: i for i, n in enumerate(self.node_ids)}

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def vector(self, node_id: str) -> np.ndarray:
        return self.matrix[self._index[node_id]]


@njit(cache=True)
def _sgns_kernel(
    W: np.ndarray,
    C: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
    pair_offset: int,
    total_pairs: int,
    lr0: float,
    min_lr: float,
) -> float:
    """Sequential per-pair SGD updates (in place); returns summed loss.

    For each pair the center gradient accumulates over the positive and
    all negatives before being applied, while context rows update
    immediately, so repeated rows see every preceding update.
    """
    n_pairs, n_neg = negatives.shape
    dims = W.shape[1]
    grad_c = np.empty(dims)
    loss = 0.0
    for b in range(n_pairs):
        lr = lr0 * (1.0 - (pair_offset + b) / total_pairs)
        if lr < min_lr:
            lr = min_lr
        c = centers[b]
        o = contexts[b]
        for d in range(dims):
            grad_c[d] = 0.0
        score = 0.0
        for d in range(dims):
            score += W[c, d] * C[o, d]
        if score >= 0.0:
            sig = 1.0 / (1.0 + math.exp(-score))
            loss += math.log1p(math.exp(-score))
        else:
            ex = math.exp(score)
            sig = ex / (1.0 + ex)
            loss += math.log1p(ex) - score
        g = lr * (1.0 - sig)
        for d in range(dims):
            grad_c[d] += g * C[o, d]
            C[o, d] += g * W[c, d]
        for j in range(n_neg):
            n = negatives[b, j]
            if n == o:
                continue
            score = 0.0
            for d in range(dims):
                score += W[c, d] * C[n, d]
            if score >= 0.0:
                sig = 1.0 / (1.0 + math.exp(-score))
                loss += math.log1p(math.exp(-score)) + score
            else:
                ex = math.exp(score)
                sig = ex / (1.0 + ex)
                loss += math.log1p(ex)
            g = -lr * sig
            for d in range(dims):
                grad_c[d] += g * C[n, d]
                C[n, d] += g * W[c, d]
        for d in range(dims):
            W[c, d] += grad_c[d]
    return loss


def _pair_count(length: int, window: int) -> int:
    if length < 2:
        return 0
    return 2 * sum(length - off for off in range(1, min(window, length - 1) + 1))


def train_skipgram(
    sequences: Sequence[Sequence[str]],
    dims: int = 256,
    window: int = 10,
    negatives: int = 5,
    epochs: int = 5,
    learning_rate: float = 0.025,
    seed: int = 0,
    batch_size: int = 8192,
) -> NodeEmbeddings:
    """Sequential SGD over (center, context) pairs within the window.

    Negatives come from the unigram^0.75 distribution; a sampled negative
    equal to the positive context is skipped.  Updates are applied pair by
    pair, single-threaded, so training is fully deterministic; the
    learning rate decays linearly over all pairs of all epochs.
    ``batch_size`` only controls how many negatives are pre-drawn at once.
    """
    if dims < 1:
        raise InvalidInputError("dims must be >= 1")
    if not sequences:
        raise InvalidInputError("sequences must be non-empty")
    if window < 1 or negatives < 0 or epochs < 1:
        raise InvalidInputError("window >= 1, negatives >= 0, epochs >= 1 required")

    counts: dict[str, int] = {}
    for seq in sequences:
        for item in seq:
            counts[item] = counts.get(item, 0) + 1
    if not counts:
        raise InvalidInputError("sequences contain no items")
    vocab = sorted(counts, key=lambda t: (-counts[t], t))
    index = {t: i for i, t in enumerate(vocab)}
    seqs_idx = [
        np.array([index[t] for t in seq], dtype=np.int64) for seq in sequences if len(seq)
    ]

    rng = np.random.default_rng(seed)
    matrix = (rng.random((len(vocab), dims)) - 0.5) / dims
    context = np.zeros((len(vocab), dims))

    total_pairs = sum(_pair_count(s.size, window) for s in seqs_idx)
    if total_pairs == 0:
        warnings.warn(
            "no co-occurrence pairs in the corpus; vectors remain at initialization",
            stacklevel=2,
        )
        return NodeEmbeddings(vocab, matrix, dims, [])

    freqs = np.array([counts[t] for t in vocab], dtype=np.float64) ** 0.75
    noise_cum = np.cumsum(freqs / freqs.sum())

    total_all = epochs * total_pairs
    min_lr = learning_rate * 1e-4
    pair_counter = 0
    epoch_losses: list[float] = []

    def run_chunk(c_idx: np.ndarray, o_idx: np.ndarray) -> float:
        nonlocal pair_counter
        b = c_idx.size
        if negatives > 0:
            r = rng.random((b, negatives))
            negs = np.minimum(
                np.searchsorted(noise_cum, r, side="right"), len(vocab) - 1
            ).astype(np.int64)
        else:
            negs = np.empty((b, 0), dtype=np.int64)
        loss = _sgns_kernel(
            matrix, context, c_idx, o_idx, negs,
            pair_counter, total_all, learning_rate, min_lr,
        )
        pair_counter += b
        return float(loss)

    for _ in range(epochs):
        loss_sum = 0.0
        pend_c: list[np.ndarray] = []
        pend_o: list[np.ndarray] = []
        pending = 0
        for seq in seqs_idx:
            length = seq.size
            for off in range(1, min(window, length - 1) + 1):
                head, tail = seq[:-off], seq[off:]
                pend_c.append(head)
                pend_o.append(tail)
                pend_c.append(tail)
                pend_o.append(head)
                pending += 2 * (length - off)
            if pending >= batch_size:
                c_all = np.concatenate(pend_c)
                o_all = np.concatenate(pend_o)
                loss_sum += run_chunk(c_all, o_all)
                pend_c, pend_o, pending = [], [], 0
        if pending:
            loss_sum += run_chunk(np.concatenate(pend_c), np.concatenate(pend_o))
        epoch_losses.append(loss_sum / total_pairs)

    return NodeEmbeddings(vocab, matrix, dims, epoch_losses)


def report_embedding_block(embeddings: NodeEmbeddings, dataset: Dataset) -> FeatureBlock:
    """Report-node vectors as an embedding-kind feature block."""
    missing = [r.id for r in dataset.reports if report_node(r.id) not in embeddings]
    if missing:
        raise InvalidInputError(
            f"{len(missing)} report(s) missing from embeddings: "
            + ", ".join(missing[:10])
            + ("..." if len(missing) > 10 else "")
        )
    matrix = np.stack([embeddings.vector(report_node(r.id)) for r in dataset.reports])
    names = [f"emb_{j}" for j in range(embeddings.dims)]
    return FeatureBlock("graph", "embedding", dataset.ids, matrix, names)
