"""Heterogeneous multimodal graph over reports, geo objects, locations,
visual concepts, words and time nodes.

Construction is label-blind by signature: it accepts label-stripped
report views, so class information cannot leak into the embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from urbanfuse.core import InvalidInputError, ReportContent, UrbanFuseError
from urbanfuse.geo import PointGridIndex, SpatialIndex
from urbanfuse.ingest import VisualFeatureEntry
from urbanfuse.text import TfidfModel, tfidf_term_weights

NODE_KINDS = (
    "report",
    "geo_object",
    "location",
    "visual_concept",
    "word",
    "hour",
    "weekday",
)


def report_node(report_id: str) -> str:
    return f"report:{report_id}"


def geo_node(object_index: int) -> str:
    return f"geo:{object_index}"


def location_node(lat: float, lon: float, decimals: int = 5) -> str:
    return f"loc:{round(lat, decimals):.{decimals}f},{round(lon, decimals):.{decimals}f}"


def word_node(term: str) -> str:
    return f"word:{term}"


def concept_node(label: str) -> str:
    return f"concept:{label}"


class IsolatedReportError(UrbanFuseError):
    """Reports whose every enabled modality produced no edge."""

    def __init__(self, report_ids: list[str]):
        self.report_ids = report_ids
        super().__init__(
            f"{len(report_ids)} report(s) have no usable modality: "
            + ", ".join(report_ids[:10])
            + ("..." if len(report_ids) > 10 else "")
        )


@dataclass
class GraphConfig:
    """Which modalities contribute edges and how distances become weights.

    ``distance_weighting='inverse'`` maps a distance d (meters) to the
    affinity 1/(1+d); ``'raw'`` keeps the distance itself as the weight,
    for comparison runs.
    """

    include_geo: bool = True
    include_visual: bool = True
    include_words: bool = True
    include_time: bool = True
    include_location: bool = True
    distance_weighting: str = "inverse"
    geo_neighbors: int = 2
    concept_top_k: int = 2
    location_neighbors: int = 2
    location_decimals: int = 5
    time_weight: float = 1.0
    adjacent_time_weight: float = 0.5
    location_weight: float = 1.0

    def distance_weight(self, d_meters: float) -> float:
        if self.distance_weighting == "inverse":
            return 1.0 / (1.0 + d_meters)
        if self.distance_weighting == "raw":
            return max(d_meters, 1e-9)
        raise InvalidInputError(
            f"unknown distance weighting {self.distance_weighting!r}"
        )


class MultimodalGraph:
    """Undirected weighted graph with typed nodes.

    Weights are positive and finite; no self-loops; adjacency lists are
    sorted by neighbor id.  Adding an existing edge keeps the larger
    weight.
    """

    def __init__(self) -> None:
        self._kinds: dict[str, str] = {}
        self._adj: dict[str, dict[str, float]] = {}

    def add_node(self, node_id: str, kind: str) -> None:
        if kind not in NODE_KINDS:
            raise InvalidInputError(f"unknown node kind {kind!r}")
        existing = self._kinds.get(node_id)
        if existing is not None and existing != kind:
            raise InvalidInputError(
                f"node {node_id!r} registered as both {existing!r} and {kind!r}"
            )
        if existing is None:
            self._kinds[node_id] = kind
            self._adj[node_id] = {}

    def add_edge(self, u: str, v: str, weight: float) -> None:
        if u == v:
            raise InvalidInputError(f"self-loop on {u!r}")
        if not (weight > 0.0 and np.isfinite(weight)):
            raise InvalidInputError(f"edge ({u!r}, {v!r}) has invalid weight {weight}")
        if u not in self._kinds or v not in self._kinds:
            raise InvalidInputError(f"edge ({u!r}, {v!r}) references a missing node")
        current = self._adj[u].get(v)
        if current is not None:
            weight = max(current, weight)
        self._adj[u][v] = weight
        self._adj[v][u] = weight

    @property
    def node_ids(self) -> list[str]:
        return list(self._kinds)

    def kind(self, node_id: str) -> str:
        return self._kinds[node_id]

    def has_node(self, node_id: str) -> bool:
        return node_id in self._kinds

    def neighbors(self, node_id: str) -> list[tuple[str, float]]:
        adj = self._adj[node_id]
        return [(v, adj[v]) for v in sorted(adj)]

    def degree(self, node_id: str) -> int:
        return len(self._adj[node_id])

    def num_nodes(self) -> int:
        return len(self._kinds)

    def num_edges(self) -> int:
        return sum(len(a) for a in self._adj.values()) // 2

    def adjacency(self) -> dict[str, tuple[tuple[str, ...], np.ndarray]]:
        """Frozen adjacency: node -> (sorted neighbor ids, weights)."""
        out: dict[str, tuple[tuple[str, ...], np.ndarray]] = {}
        for u, adj in self._adj.items():
            nbrs = tuple(sorted(adj))
            out[u] = (nbrs, np.array([adj[v] for v in nbrs], dtype=np.float64))
        return out


def build_graph(
    reports: Sequence[ReportContent],
    geo_index: Optional[SpatialIndex],
    visual_table: Optional[dict[str, VisualFeatureEntry]],
    tfidf_model: Optional[TfidfModel],
    config: Optional[GraphConfig] = None,
) -> MultimodalGraph:
    """Assemble the multimodal graph.

    Per report: edges to its nearest geo objects (distance-derived
    weights), its top visual concepts (probability weights), each
    in-vocabulary word (TF-IDF weights), its hour and weekday (binary
    weights, half-weight edges to the adjacent hour/weekday, with ring
    edges between neighboring time nodes) and its deduplicated location
    node, which links to the closest other locations.
    """
    if config is None:
        config = GraphConfig()
    for item in reports:
        if not isinstance(item, ReportContent):
            raise InvalidInputError(
                "build_graph takes label-stripped report views; use Dataset.stripped()"
            )
    graph = MultimodalGraph()
    for r in reports:
        graph.add_node(report_node(r.id), "report")

    if config.include_time:
        for h in range(24):
            graph.add_node(f"hour:{h}", "hour")
        for d in range(7):
            graph.add_node(f"weekday:{d}", "weekday")
        for h in range(24):
            graph.add_edge(f"hour:{h}", f"hour:{(h + 1) % 24}", config.adjacent_time_weight)
        for d in range(7):
            graph.add_edge(f"weekday:{d}", f"weekday:{(d + 1) % 7}", config.adjacent_time_weight)

    if config.include_words and tfidf_model is not None:
        for term in tfidf_model.vocabulary.terms:
            graph.add_node(word_node(term), "word")

    locations: dict[str, tuple[float, float]] = {}
    if config.include_location:
        for r in reports:
            node = location_node(r.lat, r.lon, config.location_decimals)
            if node not in locations:
                locations[node] = (
                    round(r.lat, config.location_decimals),
                    round(r.lon, config.location_decimals),
                )
                graph.add_node(node, "location")

    for r in reports:
        rnode = report_node(r.id)

        if config.include_geo and geo_index is not None:
            for d, obj_idx in geo_index.knn_all_types(r.lat, r.lon, config.geo_neighbors):
                gnode = geo_node(obj_idx)
                graph.add_node(gnode, "geo_object")
                graph.add_edge(rnode, gnode, config.distance_weight(d))

        if config.include_visual and visual_table is not None and r.image_ref is not None:
            entry = visual_table.get(r.image_ref)
            if entry is not None:
                seen: set[str] = set()
                for label, prob in entry.concepts:
                    if len(seen) >= config.concept_top_k:
                        break
                    if label in seen:
                        continue
                    seen.add(label)
                    if prob > 0.0:
                        cnode = concept_node(label)
                        graph.add_node(cnode, "visual_concept")
                        graph.add_edge(rnode, cnode, prob)

        if config.include_words and tfidf_model is not None:
            for term, weight in tfidf_term_weights(tfidf_model, r.text).items():
                if weight > 0.0:
                    graph.add_edge(rnode, word_node(term), weight)

        if config.include_time:
            h, d = r.timestamp.hour, r.timestamp.weekday()
            graph.add_edge(rnode, f"hour:{h}", config.time_weight)
            graph.add_edge(rnode, f"weekday:{d}", config.time_weight)
            for hh in ((h - 1) % 24, (h + 1) % 24):
                graph.add_edge(rnode, f"hour:{hh}", config.adjacent_time_weight)
            for dd in ((d - 1) % 7, (d + 1) % 7):
                graph.add_edge(rnode, f"weekday:{dd}", config.adjacent_time_weight)

        if config.include_location:
            graph.add_edge(
                rnode,
                location_node(r.lat, r.lon, config.location_decimals),
                config.location_weight,
            )

    if config.include_location and len(locations) >= 2:
        loc_ids = list(locations)
        loc_lats = np.array([locations[l][0] for l in loc_ids])
        loc_lons = np.array([locations[l][1] for l in loc_ids])
        loc_index = PointGridIndex(loc_lats, loc_lons)
        for i, loc in enumerate(loc_ids):
            rows, dists = loc_index.query_knn(
                loc_lats[i], loc_lons[i], config.location_neighbors + 1
            )
            added = 0
            for row, d in zip(rows, dists):
                if int(row) == i:
                    continue
                if added >= config.location_neighbors:
                    break
                graph.add_edge(loc, loc_ids[int(row)], config.distance_weight(float(d)))
                added += 1

    isolated = [r.id for r in reports if graph.degree(report_node(r.id)) == 0]
    if isolated:
        raise IsolatedReportError(isolated)
    return graph


@dataclass
class GraphStats:
    nodes_by_kind: dict[str, int]
    num_nodes: int
    num_edges: int
    degree_histogram: dict[int, int]


def graph_stats(graph: MultimodalGraph) -> GraphStats:
    by_kind = {k: 0 for k in NODE_KINDS}
    degrees: dict[int, int] = {}
    for node in graph.node_ids:
        by_kind[graph.kind(node)] += 1
        d = graph.degree(node)
        degrees[d] = degrees.get(d, 0) + 1
    by_kind = {k: v for k, v in by_kind.items() if v}
    return GraphStats(by_kind, graph.num_nodes(), graph.num_edges(), dict(sorted(degrees.items())))


def save_graph(graph: MultimodalGraph, edges_path, nodes_path) -> None:
    """Edge list as ``u<TAB>v<TAB>weight`` plus a node-kind sidecar."""
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u in sorted(graph.node_ids):
            for v, w in graph.neighbors(u):
                if u < v:
                    fh.write(f"{u}\t{v}\t{w!r}\n")
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for node in sorted(graph.node_ids):
            fh.write(f"{node}\t{graph.kind(node)}\n")


def load_graph(edges_path, nodes_path) -> MultimodalGraph:
    graph = MultimodalGraph()
    with open(nodes_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            node, kind = line.split("\t")
            graph.add_node(node, kind)
    with open(edges_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            u, v, w = line.split("\t")
            graph.add_edge(u, v, float(w))
    return graph
