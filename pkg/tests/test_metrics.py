"""Metric implementations against brute-force oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewfuse.metrics import accuracy, bootstrap_ci, pr_auc, pr_curve, roc_auc, roc_curve


def pair_count_auc(labels, scores):
    """Mann-Whitney statistic: mean over pos/neg pairs with 0.5 tie credit."""
    labels = np.asarray(labels)
    scores = np.asarray(scores)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


class TestRocAuc:
    def test_worked_example(self):
        assert roc_auc([0, 0, 1, 1], [0.1, 0.4, 0.35, 0.8]) == 0.75

    def test_perfect_separation(self):
        assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0

    def test_all_scores_equal_gives_tie_credit(self):
        assert roc_auc([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5]) == 0.5

    def test_matches_pair_counting_with_ties(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            n = int(rng.integers(2, 201))
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # coarse quantization forces plenty of tied scores
            scores = np.round(rng.random(n), 1)
            assert roc_auc(labels, scores) == pair_count_auc(labels, scores)

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 9)), min_size=2, max_size=60))
    @settings(max_examples=60, deadline=None)
    def test_pair_counting_property(self, pairs):
        labels = np.array([p[0] for p in pairs])
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.array([p[1] for p in pairs], dtype=np.float64) / 9.0
        assert roc_auc(labels, scores) == pytest.approx(pair_count_auc(labels, scores), abs=0)

    def test_complement_symmetry(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        scores = rng.random(50)
        assert roc_auc(labels, scores) + roc_auc(labels, -scores) == pytest.approx(1.0)

    def test_requires_both_classes(self):
        with pytest.raises(ValueError):
            roc_auc([1, 1, 1], [0.1, 0.2, 0.3])

    def test_rejects_non_binary_labels(self):
        with pytest.raises(ValueError):
            roc_auc([0, 1, 2], [0.1, 0.2, 0.3])

    def test_rejects_nan_scores(self):
        with pytest.raises(ValueError):
            roc_auc([0, 1], [np.nan, 0.2])


class TestRocCurve:
    def test_starts_at_origin_ends_at_one_one(self):
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, 30)
        labels[:2] = [0, 1]
        fpr, tpr, thr = roc_curve(labels, rng.random(30))
        assert fpr[0] == 0.0 and tpr[0] == 0.0 and np.isinf(thr[0])
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0

    def test_monotone_nondecreasing(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 2, 100)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(100), 1)
        fpr, tpr, thr = roc_curve(labels, scores)
        assert np.all(np.diff(fpr) >= 0)
        assert np.all(np.diff(tpr) >= 0)
        assert np.all(np.diff(thr[1:]) < 0)  # one point per distinct score

    def test_tied_scores_collapse_to_one_point(self):
        fpr, tpr, thr = roc_curve([0, 1, 0, 1], [0.5, 0.5, 0.5, 0.5])
        assert len(thr) == 2  # (0,0) anchor plus the single threshold


class TestPrAuc:
    def test_random_scores_approach_prevalence(self):
        rng = np.random.default_rng(9)
        n = 2000
        labels = (rng.random(n) < 0.25).astype(int)
        scores = rng.random(n)
        assert pr_auc(labels, scores) == pytest.approx(0.25, abs=0.05)

    def test_perfect_classifier_scores_one(self):
        labels = np.array([0] * 10 + [1] * 10)
        scores = np.concatenate([np.linspace(0, 0.4, 10), np.linspace(0.6, 1, 10)])
        assert pr_auc(labels, scores) == 1.0

    def test_matches_stepwise_sum_over_curve(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 2, 80)
        labels[:2] = [0, 1]
        scores = np.round(rng.random(80), 2)
        recall, precision, _ = pr_curve(labels, scores)
        expected = float(np.sum(np.diff(recall) * precision[1:]))
        assert pr_auc(labels, scores) == pytest.approx(expected, abs=0)

    def test_requires_positives(self):
        with pytest.raises(ValueError):
            pr_auc([0, 0], [0.1, 0.2])

    def test_curve_starts_at_zero_recall_unit_precision(self):
        recall, precision, _ = pr_curve([0, 1, 1], [0.2, 0.6, 0.9])
        assert recall[0] == 0.0 and precision[0] == 1.0
        assert recall[-1] == 1.0


class TestBootstrapCi:
    def test_ordering_and_coverage_of_point(self):
        rng = np.random.default_rng(11)
        hits = 0
        for trial in range(100):
            n = int(rng.integers(20, 60))
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            scores = rng.random(n) + 0.3 * labels
            point, lo, hi = bootstrap_ci(labels, scores, roc_auc, n_boot=200, seed=trial)
            assert lo <= hi
            if lo <= point <= hi:
                hits += 1
        assert hits >= 99

    def test_deterministic_given_seed(self):
        labels = np.array([0, 1] * 15)
        scores = np.arange(30) / 30.0
        a = bootstrap_ci(labels, scores, roc_auc, n_boot=100, seed=7)
        b = bootstrap_ci(labels, scores, roc_auc, n_boot=100, seed=7)
        assert a == b

    def test_point_is_full_sample_statistic(self):
        labels = np.array([0, 0, 1, 1])
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        point, _, _ = bootstrap_ci(labels, scores, roc_auc, n_boot=50, seed=0)
        assert point == 0.75


class TestAccuracy:
    def test_basic(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            accuracy([0, 1], [0])
