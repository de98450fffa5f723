import numpy as np
import pytest

from urbanfuse.core import InvalidInputError
from urbanfuse.metrics import ConfusionMatrix, confusion, f1_report, per_class_table


class TestConfusion:
    def test_direct_count(self):
        cm = confusion([0, 0, 1], [0, 1, 1], 2)
        assert cm.counts.tolist() == [[1, 1], [0, 1]]

    def test_perfect_prediction_is_diagonal(self):
        y = [0, 1, 2, 1, 0]
        cm = confusion(y, y, 3)
        assert np.array_equal(cm.counts, np.diag([2, 2, 1]))

    def test_total_equals_n(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 4, 37)
        y_pred = rng.integers(0, 4, 37)
        assert confusion(y_true, y_pred, 4).total == 37

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            confusion([0, 1], [0], 2)

    def test_out_of_range(self):
        with pytest.raises(InvalidInputError):
            confusion([0, 5], [0, 1], 2)


class TestF1Report:
    # Expected values below are hand-computed from precision/recall
    # definitions applied to each fixed matrix.

    def test_worked_two_class_example(self):
        # [[1,1],[0,1]]: both classes get F1 2/3; weighted and accuracy 2/3.
        report = f1_report(ConfusionMatrix(np.array([[1, 1], [0, 1]]), ("a", "b")))
        assert report.per_class[0].precision == pytest.approx(1.0, abs=1e-12)
        assert report.per_class[0].recall == pytest.approx(0.5, abs=1e-12)
        assert report.per_class[0].f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.per_class[1].f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.weighted_f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.accuracy == pytest.approx(2 / 3, abs=1e-12)

    def test_perfect_diagonal(self):
        report = f1_report(ConfusionMatrix(np.diag([3, 2, 4]), ("a", "b", "c")))
        assert report.weighted_f1 == 1.0
        assert report.macro_f1 == 1.0
        assert report.micro_f1 == 1.0
        assert report.accuracy == 1.0

    def test_three_class_hand_computed(self):
        # [[2,1,0],[0,3,1],[1,0,2]]: F1 = (2/3, 3/4, 2/3), weighted 0.7,
        # macro 25/36, accuracy 0.7.
        cm = ConfusionMatrix(np.array([[2, 1, 0], [0, 3, 1], [1, 0, 2]]), ("a", "b", "c"))
        report = f1_report(cm)
        assert report.per_class[0].f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.per_class[1].f1 == pytest.approx(3 / 4, abs=1e-12)
        assert report.per_class[2].f1 == pytest.approx(2 / 3, abs=1e-12)
        assert report.weighted_f1 == pytest.approx(0.7, abs=1e-12)
        assert report.macro_f1 == pytest.approx(25 / 36, abs=1e-12)
        assert report.accuracy == pytest.approx(0.7, abs=1e-12)

    def test_zero_support_class_excluded(self):
        # [[0,0],[0,5]]: class a absent from test -> excluded from both
        # weighted and macro aggregates.
        report = f1_report(ConfusionMatrix(np.array([[0, 0], [0, 5]]), ("a", "b")))
        assert report.weighted_f1 == pytest.approx(1.0, abs=1e-12)
        assert report.macro_f1 == pytest.approx(1.0, abs=1e-12)
        assert report.accuracy == pytest.approx(1.0, abs=1e-12)

    def test_zero_precision_recall_gives_zero_f1(self):
        # [[2,0,0],[1,0,0],[0,0,3]]: class b never predicted, F1 = 0 (not
        # NaN); weighted 23/30, macro 0.6, accuracy 5/6.
        cm = ConfusionMatrix(np.array([[2, 0, 0], [1, 0, 0], [0, 0, 3]]), ("a", "b", "c"))
        report = f1_report(cm)
        assert report.per_class[0].f1 == pytest.approx(0.8, abs=1e-12)
        assert report.per_class[1].f1 == 0.0
        assert report.per_class[2].f1 == pytest.approx(1.0, abs=1e-12)
        assert report.weighted_f1 == pytest.approx(23 / 30, abs=1e-12)
        assert report.macro_f1 == pytest.approx(0.6, abs=1e-12)
        assert report.accuracy == pytest.approx(5 / 6, abs=1e-12)

    def test_micro_f1_equals_accuracy_on_random_instances(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(5, 200))
            k = int(rng.integers(2, 8))
            y_true = rng.integers(0, k, n)
            y_pred = rng.integers(0, k, n)
            report = f1_report(confusion(y_true, y_pred, k))
            direct_accuracy = float(np.mean(y_true == y_pred))
            assert report.micro_f1 == report.accuracy
            assert report.accuracy == pytest.approx(direct_accuracy, abs=1e-12)

    def test_metrics_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            y_true = rng.integers(0, 3, 30)
            y_pred = rng.integers(0, 3, 30)
            report = f1_report(confusion(y_true, y_pred, 3))
            for v in (report.macro_f1, report.micro_f1, report.weighted_f1, report.accuracy):
                assert 0.0 <= v <= 1.0

    def test_weighted_f1_invariant_to_index_permutation(self):
        rng = np.random.default_rng(2)
        y_true = rng.integers(0, 4, 100)
        y_pred = rng.integers(0, 4, 100)
        base = f1_report(confusion(y_true, y_pred, 4)).weighted_f1
        perm = np.array([2, 0, 3, 1])
        permuted = f1_report(confusion(perm[y_true], perm[y_pred], 4)).weighted_f1
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_empty_matrix_rejected(self):
        with pytest.raises(InvalidInputError):
            f1_report(ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a", "b")))


class TestPerClassTable:
    def _reports(self):
        cm1 = confusion([0, 0, 0, 1, 1, 2], [0, 0, 1, 1, 1, 2], 3, ("a", "b", "c"))
        cm2 = confusion([0, 0, 0, 1, 1, 2], [0, 1, 1, 1, 0, 2], 3, ("a", "b", "c"))
        return [("clf1", f1_report(cm1)), ("clf2", f1_report(cm2))]

    def test_shape_and_sorting(self):
        table = per_class_table(self._reports())
        assert table.classifier_names == ("clf1", "clf2")
        assert [row[0] for row in table.rows] == ["a", "b", "c"]  # support 3,2,1
        assert all(len(row[2]) == 2 for row in table.rows)

    def test_normalized_support_sums_to_one(self):
        table = per_class_table(self._reports())
        assert sum(row[1] for row in table.rows) == pytest.approx(1.0, abs=1e-9)

    def test_top_k_filter(self):
        table = per_class_table(self._reports(), top_k=2)
        assert [row[0] for row in table.rows] == ["a", "b"]

    def test_taxonomy_mismatch_rejected(self):
        r1 = f1_report(confusion([0, 1], [0, 1], 2, ("a", "b")))
        r2 = f1_report(confusion([0, 1], [0, 1], 2, ("x", "y")))
        with pytest.raises(InvalidInputError):
            per_class_table([("one", r1), ("two", r2)])

    def test_csv_export(self, tmp_path):
        table = per_class_table(self._reports())
        text = table.to_csv()
        assert text.splitlines()[0] == "class,normalized_support,clf1,clf2"
        table.to_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text() == text
