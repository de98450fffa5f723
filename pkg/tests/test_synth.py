import numpy as np
import pytest

from urbanfuse import ingest
from urbanfuse.core import InvalidInputError, split_dataset, validate_dataset
from urbanfuse.synth import SynthConfig, generate


class TestConfigValidation:
    def test_too_few_reports(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(num_reports=3, num_issue_classes=8)

    def test_bad_weight(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(num_reports=100, text_weight=1.5)

    def test_bad_noise(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(num_reports=100, label_noise=1.0)

    def test_bad_priors(self):
        with pytest.raises(InvalidInputError):
            SynthConfig(num_reports=100, num_issue_classes=2, num_main_classes=2, priors=(0.9, 0.2))


class TestDeterminism:
    def test_same_seed_byte_identical_files(self, tmp_path):
        for run in ("one", "two"):
            d = tmp_path / run
            d.mkdir()
            data = generate(SynthConfig(num_reports=50, num_issue_classes=4, num_main_classes=2, seed=9))
            ingest.save_reports(data.dataset, d / "reports.jsonl")
            ingest.save_geo_objects(data.geo_objects, d / "geo.csv")
            ingest.save_historical_events(data.events, d / "events.csv")
            ingest.save_weather(data.weather, d / "weather.csv")
            ingest.save_visual_features(data.visual, d / "visual.jsonl")
        for name in ("reports.jsonl", "geo.csv", "events.csv", "weather.csv", "visual.jsonl"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_different_seed_differs(self):
        a = generate(SynthConfig(num_reports=30, num_issue_classes=3, num_main_classes=3, seed=1))
        b = generate(SynthConfig(num_reports=30, num_issue_classes=3, num_main_classes=3, seed=2))
        assert [r.text for r in a.dataset.reports] != [r.text for r in b.dataset.reports]


class TestGeneratedData:
    def test_passes_validation_and_loaders(self, tmp_path):
        data = generate(SynthConfig(num_reports=80, num_issue_classes=6, num_main_classes=3, seed=4))
        assert validate_dataset(data.dataset).ok()
        ingest.save_reports(data.dataset, tmp_path / "r.jsonl")
        ingest.save_geo_objects(data.geo_objects, tmp_path / "g.csv")
        ingest.save_historical_events(data.events, tmp_path / "e.csv")
        ingest.save_weather(data.weather, tmp_path / "w.csv")
        ingest.save_visual_features(data.visual, tmp_path / "v.jsonl")
        assert len(ingest.load_reports(tmp_path / "r.jsonl")) == 80
        assert len(ingest.load_geo_objects(tmp_path / "g.csv")) == len(data.geo_objects)
        assert len(ingest.load_historical_events(tmp_path / "e.csv")) == len(data.events)
        assert len(ingest.load_weather(tmp_path / "w.csv")) == len(data.weather)
        assert len(ingest.load_visual_features(tmp_path / "v.jsonl")) == 80

    def test_marginal_distribution_matches_priors(self):
        priors = (0.4, 0.3, 0.2, 0.1)
        data = generate(
            SynthConfig(num_reports=10000, num_issue_classes=4, num_main_classes=2,
                        priors=priors, seed=11)
        )
        counts = np.zeros(4)
        for r in data.dataset.reports:
            counts[data.dataset.taxonomy.issue_classes.index(r.issue_class)] += 1
        freqs = counts / counts.sum()
        assert np.abs(freqs - np.asarray(priors)).max() <= 0.02

    def test_label_noise_flips_labels(self):
        clean = generate(SynthConfig(num_reports=500, num_issue_classes=4, num_main_classes=2, seed=3))
        noisy = generate(
            SynthConfig(num_reports=500, num_issue_classes=4, num_main_classes=2,
                        label_noise=0.3, seed=3)
        )
        flipped = sum(
            a.issue_class != b.issue_class
            for a, b in zip(clean.dataset.reports, noisy.dataset.reports)
        )
        assert 100 <= flipped <= 200  # ~0.3 * 500

    def test_weather_covers_report_hours(self):
        from urbanfuse.temporal import weather_block

        data = generate(SynthConfig(num_reports=60, num_issue_classes=4, num_main_classes=2, seed=8))
        block = weather_block(data.dataset, data.weather)
        assert block.width == 18


class TestPlantedSignal:
    def test_fully_informative_text_reaches_high_f1(self):
        # weights (text=1, others=0): a text-only logistic classifier gets
        # weighted F1 >= 0.95 on 2000 reports over 8 classes.
        from urbanfuse.classifiers import predict_proba, train_logreg
        from urbanfuse.metrics import confusion, f1_report
        from urbanfuse.text import build_vocabulary, report_text_block, tfidf_fit, tokenize

        data = generate(
            SynthConfig(num_reports=2000, num_issue_classes=8, num_main_classes=8,
                        text_weight=1.0, visual_weight=0.0, geo_weight=0.0,
                        time_weight=0.0, seed=17)
        )
        train, test = split_dataset(data.dataset, 0.2, seed=5)
        corpus = [tokenize(r.text) for r in train.reports]
        model = tfidf_fit(corpus, build_vocabulary(corpus, 50000, 2))
        block = report_text_block(data.dataset, model)
        clf = train_logreg(block.take(train.ids).matrix, train.labels("issue"),
                           class_labels=list(data.dataset.taxonomy.issue_classes))
        pred = predict_proba(clf, block.take(test.ids).matrix).argmax(axis=1)
        report = f1_report(confusion(test.labels("issue"), pred, 8))
        assert report.weighted_f1 >= 0.95
