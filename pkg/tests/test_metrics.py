import numpy as np
import pytest

from fedmodal import metrics
from fedmodal.errors import ShapeError


class TestAccuracy:
    def test_all_correct(self):
        assert metrics.accuracy([1, 2, 0], [1, 2, 0]) == 1.0

    def test_all_wrong(self):
        assert metrics.accuracy([1, 1, 1], [0, 0, 0]) == 0.0

    def test_three_of_four(self):
        assert metrics.accuracy([0, 1, 2, 2], [0, 1, 2, 1]) == 0.75

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.accuracy([0, 1], [0, 1, 2])


class TestConfusion:
    def test_perfect_predictions_are_diagonal(self):
        labels = [0, 0, 1, 2, 2, 2]
        cm = metrics.confusion(labels, labels, 3)
        assert np.array_equal(cm.counts, np.diag([2, 1, 3]))

    def test_small_example(self):
        cm = metrics.confusion(predictions=[0, 1, 1], labels=[0, 0, 1], class_count=2)
        assert cm.counts[0, 0] == 1
        assert cm.counts[0, 1] == 1
        assert cm.counts[1, 1] == 1
        assert cm.total == 3

    def test_trace_over_total_equals_accuracy(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n = int(rng.integers(1, 50))
            c = int(rng.integers(2, 8))
            labels = rng.integers(0, c, size=n)
            preds = rng.integers(0, c, size=n)
            cm = metrics.confusion(preds, labels, c)
            assert cm.accuracy == pytest.approx(metrics.accuracy(preds, labels))

    def test_out_of_range_prediction_rejected(self):
        with pytest.raises(ShapeError):
            metrics.confusion([3], [0], 3)


class TestNormalize:
    def test_diagonal_becomes_identity(self):
        cm = metrics.ConfusionMatrix(np.diag([3, 7, 1]))
        norm, zero_rows = metrics.normalize(cm)
        assert np.allclose(norm, np.eye(3))
        assert not zero_rows.any()

    def test_row_halves(self):
        cm = metrics.ConfusionMatrix(np.array([[1, 1], [0, 2]]))
        norm, _ = metrics.normalize(cm)
        assert np.allclose(norm[0], [0.5, 0.5])

    def test_zero_row_is_flagged(self):
        cm = metrics.ConfusionMatrix(np.array([[2, 0], [0, 0]]))
        norm, zero_rows = metrics.normalize(cm)
        assert np.all(norm[1] == 0.0)
        assert zero_rows.tolist() == [False, True]

    def test_rows_sum_to_one_or_flagged(self):
        rng = np.random.default_rng(3)
        counts = rng.integers(0, 5, size=(6, 6))
        counts[4] = 0
        norm, zero_rows = metrics.normalize(metrics.ConfusionMatrix(counts))
        sums = norm.sum(axis=1)
        assert np.allclose(sums[~zero_rows], 1.0)
        assert np.all(sums[zero_rows] == 0.0)


class TestDeltaGap:
    def test_reference_values(self):
        # 93.68% federated vs 96.31% centralized image accuracy.
        assert metrics.delta_gap(0.9368, 0.9631) == pytest.approx(0.0263, abs=1e-12)

    def test_equal_inputs(self):
        assert metrics.delta_gap(0.5, 0.5) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a, b = rng.uniform(size=2)
            assert metrics.delta_gap(a, b) == metrics.delta_gap(b, a)
