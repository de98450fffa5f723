from datetime import datetime

import numpy as np
import pytest

from urbanfuse import ingest
from urbanfuse.core import Dataset, FeatureBlock
from urbanfuse.ingest import (
    CorruptModelError,
    FormatError,
    GeoObject,
    HistoricalEvent,
    VersionError,
    VisualFeatureEntry,
    WeatherRow,
)

from conftest import make_dataset, make_report, make_taxonomy


class TestReports:
    def test_round_trip(self, tmp_path):
        ds = make_dataset(5)
        path = tmp_path / "reports.jsonl"
        ingest.save_reports(ds, path)
        loaded = ingest.load_reports(path)
        assert loaded.ids == ds.ids
        assert loaded.taxonomy == ds.taxonomy
        for a, b in zip(loaded.reports, ds.reports):
            assert a == b

    def test_three_line_file(self, tmp_path):
        path = tmp_path / "r.jsonl"
        lines = [
            '{"id": "a", "text": "x", "timestamp": "2021-01-01T10:00:00", "lat": 1.0, "lon": 2.0, "main_class": "m", "issue_class": "i"}',
            '{"id": "b", "text": "y", "timestamp": "2021-01-02T10:00:00", "lat": 1.0, "lon": 2.0, "main_class": "m", "issue_class": "i"}',
            '{"id": "c", "text": "z", "timestamp": "2021-01-03T10:00:00", "lat": 1.0, "lon": 2.0, "main_class": "m", "issue_class": "i"}',
        ]
        path.write_text("\n".join(lines) + "\n")
        ds = ingest.load_reports(path)
        assert len(ds) == 3 and ds.ids == ["a", "b", "c"]

    def test_bad_latitude_cites_line(self, tmp_path):
        path = tmp_path / "r.jsonl"
        good = '{"id": "a", "text": "x", "timestamp": "2021-01-01T10:00:00", "lat": 1.0, "lon": 2.0, "main_class": "m", "issue_class": "i"}'
        bad = '{"id": "b", "text": "x", "timestamp": "2021-01-01T10:00:00", "lat": "abc", "lon": 2.0, "main_class": "m", "issue_class": "i"}'
        path.write_text(good + "\n" + bad + "\n")
        with pytest.raises(FormatError, match="line 2"):
            ingest.load_reports(path)


class TestCsvLoaders:
    def test_geo_objects_round_trip(self, tmp_path):
        objects = [
            GeoObject("garbage_container", 52.1, 4.9),
            GeoObject("garbage_container", 52.2, 4.8),
            GeoObject("tree_chestnut", 52.15, 4.85),
            GeoObject("tree_chestnut", 52.16, 4.86),
            GeoObject("bench", 52.11, 4.91),
        ]
        path = tmp_path / "geo.csv"
        ingest.save_geo_objects(objects, path)
        loaded = ingest.load_geo_objects(path)
        assert loaded == objects
        assert len({o.object_type for o in loaded}) == 3

    def test_events_round_trip(self, tmp_path):
        events = [HistoricalEvent("litter", 52.0, 5.0, datetime(2020, 3, 4, 11))]
        path = tmp_path / "events.csv"
        ingest.save_historical_events(events, path)
        assert ingest.load_historical_events(path) == events

    def test_weather_round_trip(self, tmp_path):
        rows = [
            WeatherRow(datetime(2021, 1, 1, h), (float(h), 2.5), ("temp", "wind"))
            for h in range(4)
        ]
        path = tmp_path / "weather.csv"
        ingest.save_weather(rows, path)
        assert ingest.load_weather(path) == rows

    def test_weather_duplicate_hour_names_hour(self, tmp_path):
        path = tmp_path / "weather.csv"
        path.write_text(
            "timestamp,temp\n2021-01-01T15:00:00,1.0\n2021-01-01T15:00:00,2.0\n"
        )
        with pytest.raises(FormatError, match="2021-01-01T15:00"):
            ingest.load_weather(path)


class TestVisual:
    def _entry(self, rid="a"):
        return VisualFeatureEntry(rid, np.zeros(2048), (("cat", 0.8), ("dog", 0.1)))

    def test_round_trip(self, tmp_path):
        table = {"a": self._entry("a"), "b": self._entry("b")}
        path = tmp_path / "vis.jsonl"
        ingest.save_visual_features(table, path)
        loaded = ingest.load_visual_features(path)
        assert set(loaded) == {"a", "b"}
        assert np.array_equal(loaded["a"].vector, table["a"].vector)
        assert loaded["a"].concepts == table["a"].concepts

    def test_wrong_width_rejected(self):
        with pytest.raises(FormatError, match="width"):
            VisualFeatureEntry("a", np.zeros(2047), (("cat", 0.8), ("dog", 0.1)))

    def test_unsorted_concepts_rejected(self):
        with pytest.raises(FormatError, match="sorted"):
            VisualFeatureEntry("a", np.zeros(2048), (("cat", 0.1), ("dog", 0.8)))

    def test_loader_rejects_wrong_width(self, tmp_path):
        import json

        path = tmp_path / "vis.jsonl"
        record = {"report_id": "a", "vector": [0.0] * 2047, "concepts": [["c", 0.9], ["d", 0.1]]}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(FormatError):
            ingest.load_visual_features(path)

    def test_visual_block_zero_rows_for_missing_image(self):
        ds = Dataset(
            (
                make_report("a", image_ref="a"),
                make_report("b"),
            ),
            make_taxonomy(),
        )
        table = {"a": VisualFeatureEntry("a", np.ones(2048), (("c", 0.9), ("d", 0.1)))}
        block = ingest.visual_block(ds, table)
        assert block.matrix[0].sum() == 2048.0
        assert block.matrix[1].sum() == 0.0


class TestEmbeddings:
    def test_round_trip(self, tmp_path):
        ids = ["n1", "n2"]
        matrix = np.array([[1.5, -2.25], [0.125, 3.0]])
        path = tmp_path / "emb.tsv"
        ingest.save_embeddings(ids, matrix, path)
        loaded_ids, loaded = ingest.load_embeddings(path)
        assert loaded_ids == ids
        assert np.array_equal(loaded, matrix)


class TestModels:
    def test_logreg_round_trip_bitwise(self, tmp_path):
        from urbanfuse.classifiers import predict_proba, train_logreg

        rng = np.random.default_rng(0)
        X = rng.normal(size=(40, 6))
        y = rng.integers(0, 3, 40)
        model = train_logreg(X, y)
        path = tmp_path / "model.json"
        ingest.save_model(model, path)
        loaded = ingest.load_model(path)
        X_new = rng.normal(size=(10, 6))
        assert np.array_equal(predict_proba(model, X_new), predict_proba(loaded, X_new))

    def test_gbdt_round_trip_bitwise(self, tmp_path):
        from urbanfuse.classifiers import predict_proba, train_gbdt

        rng = np.random.default_rng(1)
        X = rng.normal(size=(50, 4))
        y = (X[:, 0] > 0).astype(int)
        model = train_gbdt(X, y, rounds=5, max_depth=3)
        path = tmp_path / "model.json"
        ingest.save_model(model, path)
        loaded = ingest.load_model(path)
        X_new = rng.normal(size=(10, 4))
        assert np.array_equal(predict_proba(model, X_new), predict_proba(loaded, X_new))

    def test_truncated_file_is_corruption_error(self, tmp_path):
        from urbanfuse.classifiers import train_logreg

        rng = np.random.default_rng(0)
        model = train_logreg(rng.normal(size=(20, 3)), rng.integers(0, 2, 20))
        path = tmp_path / "model.json"
        ingest.save_model(model, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptModelError):
            ingest.load_model(path)

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"format_version": 99, "model_type": "logreg", "params": {}}')
        with pytest.raises(VersionError):
            ingest.load_model(path)


class TestBlocks:
    def test_round_trip(self, tmp_path):
        blocks = [
            FeatureBlock("x", "raw", ["a", "b"], np.array([[1.0, 2.0], [3.0, 4.0]]), ["c1", "c2"]),
            FeatureBlock("p", "probability", ["a", "b"], np.array([[0.5, 0.5], [1.0, 0.0]]), ["u", "v"]),
        ]
        ingest.save_feature_blocks(blocks, tmp_path / "blocks")
        loaded = ingest.load_feature_blocks(tmp_path / "blocks")
        assert set(loaded) == {"x", "p"}
        assert np.array_equal(loaded["x"].matrix, blocks[0].matrix)
        assert loaded["p"].kind == "probability"

    def test_missing_artifact_names_stage(self, tmp_path):
        from urbanfuse.core import UrbanFuseError

        with pytest.raises(UrbanFuseError, match="run stage 'featurize' first"):
            ingest.require_artifact(tmp_path / "nope.json", "featurize")
