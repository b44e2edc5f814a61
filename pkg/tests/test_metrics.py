"""Accuracy, Dice, and recall formula checks."""

import numpy as np
import pytest

from fedring.errors import EmptyError, ShapeError
from fedring.metrics import ConfusionCounts, accuracy, dice, recall
from fedring.numeric import derive_stream


class TestAccuracy:
    def test_perfect_classifier(self):
        assert accuracy(ConfusionCounts(5, 5, 0, 0)) == 1.0

    def test_always_wrong(self):
        assert accuracy(ConfusionCounts(0, 0, 5, 5)) == 0.0

    def test_formula_at_reported_scale(self):
        # Illustrative back-solve of a reported 0.97 accuracy on 392 cases.
        assert accuracy(ConfusionCounts(380, 0, 12, 0)) == pytest.approx(0.969, abs=5e-4)

    def test_zero_total_rejected(self):
        with pytest.raises(EmptyError):
            accuracy(ConfusionCounts(0, 0, 0, 0))

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ConfusionCounts(-1, 0, 0, 0)

    def test_invariant_under_class_swap(self):
        rng = derive_stream(0, "metrics")
        for _ in range(50):
            tp, tn, fp, fn = (int(v) for v in rng.integers(0, 50, 4))
            if tp + tn + fp + fn == 0:
                continue
            assert accuracy(ConfusionCounts(tp, tn, fp, fn)) == accuracy(
                ConfusionCounts(tn, tp, fn, fp)
            )


class TestDice:
    def test_identical_masks(self):
        mask = np.array([True, False, True])
        assert dice(mask, mask) == 1.0

    def test_disjoint_masks(self):
        assert dice([1, 1, 0, 0], [0, 0, 1, 1]) == 0.0

    def test_half_overlap(self):
        y = np.zeros(30, dtype=bool)
        y[:10] = True
        y_pred = np.zeros(30, dtype=bool)
        y_pred[5:15] = True
        assert dice(y, y_pred) == 0.5

    def test_symmetric(self):
        rng = derive_stream(1, "metrics")
        for _ in range(50):
            a = rng.random(20) < 0.4
            b = rng.random(20) < 0.4
            if not (a.any() or b.any()):
                continue
            assert dice(a, b) == dice(b, a)

    def test_bounded_under_fuzzing(self):
        rng = derive_stream(2, "metrics")
        for _ in range(100):
            a = rng.random(16) < rng.random()
            b = rng.random(16) < rng.random()
            if not (a.any() or b.any()):
                continue
            assert 0.0 <= dice(a, b) <= 1.0

    def test_both_empty_rejected(self):
        with pytest.raises(EmptyError):
            dice(np.zeros(4, dtype=bool), np.zeros(4, dtype=bool))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            dice(np.ones(3, dtype=bool), np.ones(4, dtype=bool))


class TestRecall:
    def test_prediction_superset(self):
        assert recall([0, 1, 1, 0], [1, 1, 1, 0]) == 1.0

    def test_disjoint(self):
        assert recall([1, 1, 0, 0], [0, 0, 1, 1]) == 0.0

    def test_half(self):
        y = np.zeros(20, dtype=bool)
        y[:10] = True
        y_pred = np.zeros(20, dtype=bool)
        y_pred[5:10] = True
        assert recall(y, y_pred) == 0.5

    def test_not_symmetric_witness(self):
        y = np.array([True, True, False, False])
        y_pred = np.array([True, False, False, False])
        assert recall(y, y_pred) != recall(y_pred, y)

    def test_empty_ground_truth_rejected(self):
        with pytest.raises(EmptyError):
            recall(np.zeros(4, dtype=bool), np.ones(4, dtype=bool))
