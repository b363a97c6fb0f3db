import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokecast.errors import ParameterError, UndefinedMetricError
from strokecast.metrics import (
    GOOD,
    MetricsReport,
    accuracy,
    auc,
    confusion_matrix,
    dichotomize,
    dichotomize_array,
    f1,
    one_nearest_accuracy,
    recall,
)

from oracles import auc_pair_counting


class TestDichotomize:
    @pytest.mark.parametrize("mrs,want", [(0, 0), (2, 0), (3, 1), (6, 1)])
    def test_boundaries(self, mrs, want):
        assert dichotomize(mrs) == want

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            dichotomize(7)
        with pytest.raises(ParameterError):
            dichotomize(-1)

    def test_array_form_matches_scalar(self):
        mrs = np.arange(7)
        assert dichotomize_array(mrs).tolist() == [dichotomize(int(m)) for m in mrs]


class TestAccuracy:
    def test_perfect_and_zero(self):
        assert accuracy([1, 0, 1], [1, 0, 1]) == 1.0
        assert accuracy([1, 1, 1], [0, 0, 0]) == 0.0

    def test_all_majority_on_registry_base_rate(self):
        truth = np.array([0] * 127 + [1] * 373)
        pred = np.ones(500, dtype=int)
        assert accuracy(pred, truth) == pytest.approx(0.746)

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            accuracy([], [])


class TestF1:
    def test_all_negative_prediction_scores_zero(self):
        truth = np.array([0] * 30 + [1] * 70)
        pred = np.ones(100, dtype=int)  # never predicts the good class
        assert f1(pred, truth, positive_class=GOOD) == 0.0

    def test_perfect(self):
        truth = np.array([0, 0, 1, 1])
        assert f1(truth, truth) == 1.0

    def test_hand_case(self):
        # tp=2, fp=1, fn=1 on the positive class 0
        pred = np.array([0, 0, 0, 1, 1])
        truth = np.array([0, 0, 1, 0, 1])
        assert f1(pred, truth) == pytest.approx(2 / 3)


class TestAUC:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        truth = np.array([1, 1, 0, 0])
        assert auc(scores, truth) == 1.0

    def test_all_ties_is_half(self):
        assert auc(np.full(10, 0.5), np.array([1] * 4 + [0] * 6)) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(UndefinedMetricError):
            auc(np.array([0.1, 0.9]), np.array([1, 1]))

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = 20
            scores = rng.choice(np.linspace(0, 1, 7), size=n)  # ties guaranteed
            truth = rng.integers(0, 2, size=n)
            if truth.sum() in (0, n):
                truth[0] = 1 - truth[0]
            assert auc(scores, truth) == auc_pair_counting(scores, truth)

    def test_rank_invariance_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        truth = rng.integers(0, 2, size=50)
        truth[0], truth[1] = 0, 1
        base = auc(scores, truth)
        for fn in (lambda s: 3 * s + 2, np.tanh, lambda s: s ** 3):
            assert auc(fn(scores), truth) == base


class TestOneNearest:
    def test_adjacent_counts_correct(self):
        assert one_nearest_accuracy([4], [3]) == 1.0

    def test_distance_two_incorrect(self):
        assert one_nearest_accuracy([2], [0]) == 0.0

    def test_equals_accuracy_when_exact(self):
        pred = np.array([0, 3, 6, 2])
        assert one_nearest_accuracy(pred, pred) == accuracy(pred, pred) == 1.0

    @given(st.integers(0, 2 ** 31 - 1), st.integers(1, 200))
    @settings(max_examples=50, deadline=None)
    def test_dominates_accuracy(self, seed, n):
        rng = np.random.default_rng(seed)
        pred = rng.integers(0, 7, size=n)
        truth = rng.integers(0, 7, size=n)
        assert one_nearest_accuracy(pred, truth) >= accuracy(pred, truth)


class TestConfusionAndRecall:
    def test_entries_sum_to_n(self):
        rng = np.random.default_rng(2)
        pred = rng.integers(0, 7, size=60)
        truth = rng.integers(0, 7, size=60)
        m = confusion_matrix(pred, truth, 7)
        assert m.sum() == 60
        assert m[3, 5] == int(np.sum((truth == 3) & (pred == 5)))

    def test_recall(self):
        pred = np.array([0, 0, 1, 1])
        truth = np.array([0, 1, 0, 1])
        assert recall(pred, truth, positive_class=0) == 0.5

    def test_recall_undefined_without_positives(self):
        with pytest.raises(UndefinedMetricError):
            recall([1, 1], [1, 1], positive_class=0)


class TestDichotomizedComposition:
    def test_mapped_sevenclass_predictions_compose(self):
        rng = np.random.default_rng(3)
        pred7 = rng.integers(0, 7, size=200)
        truth7 = rng.integers(0, 7, size=200)
        direct = accuracy(dichotomize_array(pred7), dichotomize_array(truth7))
        mapped = np.mean([dichotomize(int(p)) == dichotomize(int(t))
                          for p, t in zip(pred7, truth7)])
        assert direct == pytest.approx(mapped)


class TestReportText:
    def test_round_trip_dichotomised(self):
        r = MetricsReport("dichotomised", "multimodal", accuracy=0.77, f1=0.62,
                          auc=0.754321, confusion=np.array([[10, 3], [5, 82]]),
                          n_samples=100)
        back = MetricsReport.from_text(r.to_text())
        assert back.accuracy == r.accuracy and back.auc == r.auc and back.f1 == r.f1
        assert np.array_equal(back.confusion, r.confusion)
        assert back.one_nearest_accuracy is None

    def test_round_trip_individual(self):
        r = MetricsReport("individual", "image_only", accuracy=0.32,
                          one_nearest_accuracy=0.66,
                          confusion=np.eye(7, dtype=int), n_samples=100)
        back = MetricsReport.from_text(r.to_text())
        assert back.auc is None and back.f1 is None
        assert back.one_nearest_accuracy == r.one_nearest_accuracy
