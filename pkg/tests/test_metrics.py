import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iol.metrics import (
    accuracy,
    average_precision,
    evaluate,
    log_loss,
    midranks,
    roc_auc,
)


def auc_pairs(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    total = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def aps_definition(scores, labels):
    # mean over positives of the precision at the threshold equal to their score
    precisions = []
    for s in scores[labels == 1]:
        chosen = scores >= s
        precisions.append(labels[chosen].sum() / chosen.sum())
    return float(np.mean(precisions))


def random_set(rng):
    n = int(rng.integers(2, 201))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    if rng.random() < 0.5:
        scores = rng.integers(0, 6, n) / 5.0  # heavy ties
    else:
        scores = rng.random(n)
    return scores, labels


class TestRanks:
    def test_midranks(self):
        np.testing.assert_array_equal(midranks(np.array([3.0, 1.0, 3.0, 2.0])), [3.5, 1, 3.5, 2])


class TestAuc:
    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            scores, labels = random_set(rng)
            assert roc_auc(scores, labels) == pytest.approx(auc_pairs(scores, labels), abs=1e-9)

    def test_perfect_and_constant(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class_is_undefined(self):
        assert roc_auc([0.2, 0.4], [1, 1]) is None

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_invariant_to_monotone_transform(self, seed):
        rng = np.random.default_rng(seed)
        scores, labels = random_set(rng)
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(3 * scores) - 7, labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(np.arctan(scores), labels) == pytest.approx(base, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1])


class TestAps:
    def test_matches_definition(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            scores, labels = random_set(rng)
            assert average_precision(scores, labels) == pytest.approx(aps_definition(scores, labels), abs=1e-9)

    def test_perfect_ranker(self):
        labels = np.array([0, 1, 0, 1, 1, 0, 0])
        assert average_precision(labels * 0.9 + 0.05, labels) == 1.0

    def test_constant_ranker_equals_prevalence(self):
        labels = np.array([0, 1, 0, 1, 1, 0, 0])
        assert average_precision(np.full(7, 0.3), labels) == pytest.approx(3 / 7, abs=1e-15)

    def test_no_positives_is_undefined(self):
        assert average_precision([0.1, 0.9], [0, 0]) is None


class TestPointMetrics:
    def test_perfect(self):
        labels = np.array([1, 0, 1])
        probs = labels.astype(float)
        assert accuracy(probs, labels) == 1.0
        assert log_loss(probs, labels) < 1e-12

    def test_constant_half(self):
        labels = np.array([1, 0, 0, 1, 1])
        assert log_loss(np.full(5, 0.5), labels) == pytest.approx(math.log(2), abs=1e-15)
        assert accuracy(np.full(5, 0.5), labels) == 0.6

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            accuracy([0.5], [2])


class TestEvaluate:
    def test_single_repetition_is_plain_metrics(self):
        rng = np.random.default_rng(2)
        p, y = rng.random(50), rng.integers(0, 2, 50)
        rep = evaluate(p, y)
        assert rep.auc.mean == roc_auc(p, y) and rep.auc.std == 0.0
        assert rep.nll.mean == log_loss(p, y)
        assert rep.n == 50

    def test_grouped_bootstrap(self):
        rng = np.random.default_rng(3)
        p, y = rng.random(60), rng.integers(0, 2, 60)
        groups = np.repeat(np.arange(12), 5)
        a = evaluate(p, y, groups, repetitions=8, seed=1)
        b = evaluate(p, y, groups, repetitions=8, seed=1)
        assert a == b
        assert a.auc.std > 0
        assert 0 <= a.acc.mean <= 1 and a.nll.mean >= 0

    def test_undefined_auc_flagged(self):
        rep = evaluate([0.3, 0.7], [1, 1])
        assert not rep.auc_defined
        d = rep.to_dict()
        assert d["auc"] is None and d["auc_defined"] is False
