"""Pipeline configuration and the stage implementations behind the CLI.

Every stage is a pure function of (config, input artifacts): outputs are
versioned files under the run directory, randomness flows from the single
root seed through labeled derivation, and rerunning a stage with the same
config and inputs reproduces its outputs byte for byte.
"""

from __future__ import annotations

import copy
import csv
import json
import sys
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from urbanfuse import classifiers, fusion, geo, graph, ingest, metrics, synth, temporal, text
from urbanfuse.core import Dataset, FeatureBlock, InvalidInputError, UrbanFuseError, derive_seed
from urbanfuse.embedding import (
    NodeEmbeddings,
    WalkConfig,
    generate_walks,
    report_embedding_block,
    train_skipgram,
)

DEFAULTS: dict = {
    "seed": None,
    "out_dir": "run",
    "label_level": "main",
    "synth": {
        "num_reports": 2000,
        "num_issue_classes": 8,
        "num_main_classes": 8,
        "text_weight": 0.4,
        "visual_weight": 0.4,
        "geo_weight": 0.4,
        "time_weight": 0.4,
        "common_words": 40,
        "signal_words_per_class": 4,
        "geo_objects_per_class": 20,
        "background_objects": 60,
        "events_per_class": 15,
        "label_noise": 0.0,
        "year": 2021,
    },
    "split": {"test_fraction": 0.2},
    "text": {"max_terms": 50000, "min_df": 2},
    "graph": {"vocab_size": 5000, "distance_weighting": "inverse"},
    "embed": {
        "dims": 128,
        "walks_per_node": 5,
        "walk_length": 40,
        "window": 5,
        "negatives": 5,
        "epochs": 3,
        "p": 1.0,
        "q": 1.0,
        "learning_rate": 0.025,
        "batch_size": 1024,
    },
    "classifier": {"kind": "logreg", "l2": 1e-3, "max_iter": 200, "tol": 1e-5},
    "fusion": {
        "raw_blocks": ["text", "image", "geo", "geo_hist", "time", "weather"],
        "prob_blocks": [],
        "folds": 5,
    },
    "search": {"budget": 729, "blocks": [], "folds": 5},
    "route": {"threshold": 0.0},
}

BASE_BLOCKS = ("text", "image", "geo", "geo_hist", "time", "weather")


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise InvalidInputError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise InvalidInputError(f"config key {where!r} must be a section")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _coerce(reference, raw: str):
    if isinstance(reference, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise InvalidInputError(f"cannot parse boolean from {raw!r}")
    if isinstance(reference, int) and not isinstance(reference, bool):
        return int(raw)
    if isinstance(reference, float):
        return float(raw)
    if isinstance(reference, list):
        return [part.strip() for part in raw.split(",") if part.strip()]
    if reference is None:
        try:
            return int(raw)
        except ValueError:
            try:
                return float(raw)
            except ValueError:
                return raw
    return raw


def load_config(
    config_path: Optional[str] = None,
    overrides: tuple[str, ...] = (),
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> dict:
    """Defaults, overlaid by the TOML file, then by --set overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if config_path is not None:
        with open(config_path, "rb") as fh:
            cfg = _merge(cfg, tomllib.load(fh))
    for item in overrides:
        if "=" not in item:
            raise InvalidInputError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        node = cfg
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise InvalidInputError(f"unknown config section {key!r} in {dotted!r}")
            node = node[key]
        leaf = keys[-1]
        if leaf not in node:
            raise InvalidInputError(f"unknown config key {dotted!r}")
        node[leaf] = _coerce(node[leaf], raw)
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    if cfg["seed"] is None:
        raise InvalidInputError("a seed is required (config 'seed' or --seed)")
    cfg["seed"] = int(cfg["seed"])
    return cfg


class Paths:
    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.data_dir = self.out_dir / "data"
        self.reports = self.data_dir / "reports.jsonl"
        self.geo_objects = self.data_dir / "geo_objects.csv"
        self.events = self.data_dir / "historical_events.csv"
        self.weather = self.data_dir / "weather.csv"
        self.visual = self.data_dir / "visual_features.jsonl"
        self.blocks_dir = self.out_dir / "blocks"
        self.graph_edges = self.out_dir / "graph.edges.tsv"
        self.graph_nodes = self.out_dir / "graph.nodes.tsv"
        self.embeddings = self.out_dir / "embeddings.tsv"
        self.model = self.out_dir / "model.json"
        self.metrics_csv = self.out_dir / "metrics.csv"
        self.per_class_csv = self.out_dir / "per_class.csv"
        self.leaderboard_csv = self.out_dir / "leaderboard.csv"
        self.search_csv = self.out_dir / "search_leaderboard.csv"
        self.decisions = self.out_dir / "decisions.jsonl"


def _load_dataset(paths: Paths) -> Dataset:
    ingest.require_artifact(paths.reports, "synth")
    return ingest.load_reports(paths.reports)


def _split_dataset(cfg: dict, dataset: Dataset):
    from urbanfuse.core import split_dataset

    return split_dataset(
        dataset, cfg["split"]["test_fraction"], derive_seed(cfg["seed"], "split")
    )


def _classifier_config(cfg: dict) -> fusion.ClassifierConfig:
    section = dict(cfg["classifier"])
    kind = section.pop("kind")
    return fusion.ClassifierConfig(kind, section)


def stage_synth(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    paths.data_dir.mkdir(parents=True, exist_ok=True)
    config = synth.SynthConfig(seed=derive_seed(cfg["seed"], "synth"), **cfg["synth"])
    data = synth.generate(config)
    ingest.save_reports(data.dataset, paths.reports)
    ingest.save_geo_objects(data.geo_objects, paths.geo_objects)
    ingest.save_historical_events(data.events, paths.events)
    ingest.save_weather(data.weather, paths.weather)
    ingest.save_visual_features(data.visual, paths.visual)
    return (
        f"synth: {len(data.dataset)} reports, {len(data.geo_objects)} geo objects, "
        f"{len(data.events)} events, {len(data.weather)} weather hours"
    )


def stage_featurize(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    dataset = _load_dataset(paths)
    geo_objects = ingest.load_geo_objects(ingest.require_artifact(paths.geo_objects, "synth"))
    events = ingest.load_historical_events(ingest.require_artifact(paths.events, "synth"))
    weather = ingest.load_weather(ingest.require_artifact(paths.weather, "synth"))
    visual = ingest.load_visual_features(ingest.require_artifact(paths.visual, "synth"))

    train, _ = _split_dataset(cfg, dataset)
    train_corpus = [text.tokenize(r.text) for r in train.reports]
    vocab = text.build_vocabulary(
        train_corpus, cfg["text"]["max_terms"], cfg["text"]["min_df"]
    )
    tfidf = text.tfidf_fit(train_corpus, vocab)

    index = geo.build_spatial_index(geo_objects)
    blocks = [
        text.report_text_block(dataset, tfidf),
        ingest.visual_block(dataset, visual),
        geo.geo_block(dataset, index),
        geo.historical_block(dataset, events),
        temporal.time_block(dataset),
        temporal.weather_block(dataset, weather),
    ]
    ingest.save_feature_blocks(blocks, paths.blocks_dir)
    widths = ", ".join(f"{b.name}={b.width}" for b in blocks)
    return f"featurize: {len(blocks)} blocks over {len(dataset)} reports ({widths})"


def stage_graph(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    dataset = _load_dataset(paths)
    geo_objects = ingest.load_geo_objects(ingest.require_artifact(paths.geo_objects, "synth"))
    visual = ingest.load_visual_features(ingest.require_artifact(paths.visual, "synth"))

    corpus = [text.tokenize(r.text) for r in dataset.reports]
    vocab = text.build_vocabulary(corpus, cfg["graph"]["vocab_size"], min_df=1)
    tfidf = text.tfidf_fit(corpus, vocab, normalize=False)
    index = geo.build_spatial_index(geo_objects)
    config = graph.GraphConfig(distance_weighting=cfg["graph"]["distance_weighting"])
    g = graph.build_graph(dataset.stripped(), index, visual, tfidf, config)
    graph.save_graph(g, paths.graph_edges, paths.graph_nodes)
    stats = graph.graph_stats(g)
    kinds = ", ".join(f"{k}={v}" for k, v in sorted(stats.nodes_by_kind.items()))
    return f"graph: {stats.num_nodes} nodes ({kinds}), {stats.num_edges} edges"


def stage_embed(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    ingest.require_artifact(paths.graph_edges, "graph")
    ingest.require_artifact(paths.graph_nodes, "graph")
    g = graph.load_graph(paths.graph_edges, paths.graph_nodes)
    section = cfg["embed"]
    walk_config = WalkConfig(
        p=section["p"],
        q=section["q"],
        walks_per_node=section["walks_per_node"],
        walk_length=section["walk_length"],
        seed=derive_seed(cfg["seed"], "walks"),
    )
    walks = generate_walks(g, walk_config)
    embeddings = train_skipgram(
        walks,
        dims=section["dims"],
        window=section["window"],
        negatives=section["negatives"],
        epochs=section["epochs"],
        learning_rate=section["learning_rate"],
        seed=derive_seed(cfg["seed"], "skipgram"),
        batch_size=section["batch_size"],
    )
    ingest.save_embeddings(embeddings.node_ids, embeddings.matrix, paths.embeddings)
    last = embeddings.epoch_losses[-1] if embeddings.epoch_losses else float("nan")
    return (
        f"embed: {len(walks)} walks, {len(embeddings.node_ids)} nodes x "
        f"{embeddings.dims} dims, final epoch loss {last:.4f}"
    )


def _load_all_blocks(cfg: dict, paths: Paths, dataset: Dataset) -> dict[str, FeatureBlock]:
    ingest.require_artifact(paths.blocks_dir / "blocks.json", "featurize")
    blocks = ingest.load_feature_blocks(paths.blocks_dir)
    if paths.embeddings.exists():
        node_ids, matrix = ingest.load_embeddings(paths.embeddings)
        embeddings = NodeEmbeddings(node_ids, matrix, matrix.shape[1] if matrix.ndim == 2 else 0)
        blocks["graph"] = report_embedding_block(embeddings, dataset)
    return blocks


def _split_blocks(
    blocks: dict[str, FeatureBlock], train: Dataset, test: Dataset, names
) -> tuple[dict[str, FeatureBlock], dict[str, FeatureBlock]]:
    train_blocks = {}
    test_blocks = {}
    for name in names:
        if name not in blocks:
            raise UrbanFuseError(
                f"block {name!r} unavailable: run stage "
                f"{'embed' if name == 'graph' else 'featurize'} first"
            )
        train_blocks[name] = blocks[name].take(train.ids)
        test_blocks[name] = blocks[name].take(test.ids)
    return train_blocks, test_blocks


def stage_train(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    dataset = _load_dataset(paths)
    train, test = _split_dataset(cfg, dataset)
    blocks = _load_all_blocks(cfg, paths, dataset)
    level = cfg["label_level"]
    class_labels = dataset.taxonomy.labels(level)
    config = fusion.FusionConfig(
        tuple(cfg["fusion"]["raw_blocks"]),
        tuple(cfg["fusion"]["prob_blocks"]),
        classifier=_classifier_config(cfg),
        folds=cfg["fusion"]["folds"],
    )
    names = (*config.raw_blocks, *config.prob_blocks)
    train_blocks, test_blocks = _split_blocks(blocks, train, test, names)
    bundle, _ = fusion.fit_fusion(
        config,
        train_blocks,
        test_blocks,
        train.labels(level),
        derive_seed(cfg["seed"], "stacking"),
        class_labels,
    )
    ingest.save_model(bundle, paths.model)
    return (
        f"train: {config.classifier.kind} on [{', '.join(config.feature_names())}], "
        f"{len(train)} train rows, model -> {paths.model}"
    )


def stage_evaluate(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    dataset = _load_dataset(paths)
    train, test = _split_dataset(cfg, dataset)
    ingest.require_artifact(paths.model, "train")
    bundle = ingest.load_model(paths.model)
    if not isinstance(bundle, fusion.FusionBundle):
        raise UrbanFuseError(f"{paths.model} does not hold a fusion bundle")
    blocks = _load_all_blocks(cfg, paths, dataset)
    level = cfg["label_level"]
    class_labels = dataset.taxonomy.labels(level)
    names = (*bundle.config.raw_blocks, *bundle.config.prob_blocks)
    _, test_blocks = _split_blocks(blocks, train, test, names)
    probs = bundle.predict_proba(test_blocks)
    y_test = test.labels(level)
    y_pred = np.argmax(probs, axis=1)
    report = metrics.f1_report(
        metrics.confusion(y_test, y_pred, len(class_labels), class_labels)
    )
    with open(paths.metrics_csv, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "value"])
        writer.writerow(["weighted_f1", repr(report.weighted_f1)])
        writer.writerow(["macro_f1", repr(report.macro_f1)])
        writer.writerow(["micro_f1", repr(report.micro_f1)])
        writer.writerow(["accuracy", repr(report.accuracy)])
        writer.writerow(["test_rows", str(len(test))])
    metrics.per_class_table([(bundle.config.classifier.kind, report)]).to_csv(
        paths.per_class_csv
    )
    result = fusion.FusionResult(
        config=bundle.config,
        weighted_f1=report.weighted_f1,
        macro_f1=report.macro_f1,
        micro_f1=report.micro_f1,
        accuracy=report.accuracy,
        report=report,
        enum_index=0,
    )
    fusion.leaderboard_csv([result], paths.leaderboard_csv)
    return (
        f"evaluate: weighted F1 {report.weighted_f1:.4f}, accuracy {report.accuracy:.4f} "
        f"on {len(test)} test rows -> {paths.metrics_csv}"
    )


def stage_fuse_search(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    dataset = _load_dataset(paths)
    train, test = _split_dataset(cfg, dataset)
    blocks = _load_all_blocks(cfg, paths, dataset)
    level = cfg["label_level"]
    class_labels = dataset.taxonomy.labels(level)
    names = cfg["search"]["blocks"] or list(blocks)
    train_blocks, test_blocks = _split_blocks(blocks, train, test, names)
    results = fusion.search_fusion(
        train_blocks,
        test_blocks,
        _classifier_config(cfg),
        train.labels(level),
        test.labels(level),
        class_labels,
        budget=cfg["search"]["budget"],
        seed=derive_seed(cfg["seed"], "stacking"),
        folds=cfg["search"]["folds"],
    )
    fusion.leaderboard_csv(results, paths.search_csv)
    best = results[0]
    return (
        f"fuse-search: {len(results)} configs over {len(names)} blocks; best "
        f"[{', '.join(best.config.feature_names())}] weighted F1 {best.weighted_f1:.4f} "
        f"-> {paths.search_csv}"
    )


def stage_route(cfg: dict) -> str:
    paths = Paths(cfg["out_dir"])
    threshold = cfg["route"]["threshold"]
    if not threshold or not 0.0 < threshold <= 1.0:
        raise InvalidInputError(
            "route.threshold must be set explicitly in (0, 1] (config or --set)"
        )
    dataset = _load_dataset(paths)
    train, test = _split_dataset(cfg, dataset)
    ingest.require_artifact(paths.model, "train")
    bundle = ingest.load_model(paths.model)
    blocks = _load_all_blocks(cfg, paths, dataset)
    names = (*bundle.config.raw_blocks, *bundle.config.prob_blocks)
    _, test_blocks = _split_blocks(blocks, train, test, names)
    assembled = bundle.assemble(test_blocks)
    auto = 0
    with open(paths.decisions, "w", encoding="utf-8") as fh:
        for rid, row in zip(test.ids, assembled.matrix):
            decision = classifiers.route(bundle.meta_model, row, threshold)
            if decision.is_auto:
                auto += 1
            record = {
                "report_id": rid,
                "decision": decision.kind,
                "class_label": decision.class_label,
                "probability": decision.probability,
            }
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    total = len(test.ids)
    return (
        f"route: threshold {threshold}, {auto}/{total} auto-routed, "
        f"{total - auto} deferred -> {paths.decisions}"
    )


STAGES = {
    "synth": stage_synth,
    "featurize": stage_featurize,
    "graph": stage_graph,
    "embed": stage_embed,
    "train": stage_train,
    "evaluate": stage_evaluate,
    "fuse-search": stage_fuse_search,
    "route": stage_route,
}
