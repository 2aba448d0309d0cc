import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpl.metrics import absolute_recall, evaluate, sample_precision


def test_perfect_predictions():
    r = evaluate([1, 0, 1, 1], [1, 0, 1, 1])
    assert r.accuracy == 1.0 and r.f1 == 1.0


def test_all_positive_on_balanced_set():
    gold = [1, 0] * 50
    r = evaluate([1] * 100, gold)
    assert r.precision == 0.5 and r.recall == 1.0


def test_hand_confusion_matrix():
    r = evaluate([1, 1, 1, 0, 0], [1, 1, 0, 1, 0])
    assert (r.tp, r.fp, r.fn, r.tn) == (2, 1, 1, 1)
    assert r.precision == pytest.approx(2 / 3) and r.recall == pytest.approx(2 / 3) and r.f1 == pytest.approx(2 / 3)


def test_no_positive_predictions_gives_zero_not_nan():
    r = evaluate([0, 0], [1, 0])
    assert r.precision == 0.0 and r.f1 == 0.0


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        evaluate([1, 0], [1])


def test_report_dict_drops_missing_estimates():
    d = evaluate([1], [1]).to_dict()
    assert "sample_precision" not in d and d["f1"] == 1.0


labels = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40)


@given(labels, st.randoms())
def test_evaluate_permutation_invariant(pairs, rnd):
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    a = evaluate(*zip(*pairs))
    b = evaluate(*zip(*shuffled))
    assert a == b


def test_sample_all_correct():
    assert sample_precision(range(100), lambda _: True, 100) == (1.0, 100.0)


def test_absolute_recall_arithmetic():
    assert round(absolute_recall(0.73, 10502)) == 7666


def test_full_population_sampling_is_exact_precision():
    rng = np.random.default_rng(0)
    pred = rng.random(500) < 0.4
    gold = rng.random(500) < 0.5
    positives = np.flatnonzero(pred)
    sp, ar = sample_precision(positives, lambda i: gold[i])
    exact = evaluate(pred.astype(int), gold.astype(int)).precision
    assert sp == pytest.approx(exact, abs=1e-15)
    assert ar == pytest.approx(exact * len(positives))


def test_sample_of_50_within_binomial_ci():
    correct = np.r_[np.ones(600, bool), np.zeros(400, bool)]
    half_width = 1.96 * math.sqrt(0.6 * 0.4 / 50)
    hits = [abs(sample_precision(range(1000), correct, 50, seed)[0] - 0.6) <= half_width for seed in range(200)]
    assert np.mean(hits) >= 0.9


def test_sampling_is_seeded():
    correct = np.random.default_rng(1).random(300) < 0.5
    assert sample_precision(range(300), correct, 30, 7) == sample_precision(range(300), correct, 30, 7)


@pytest.mark.parametrize("k", [0, 11])
def test_bad_sample_size(k):
    with pytest.raises(ValueError):
        sample_precision(range(10), lambda _: True, k)


def test_empty_positives():
    with pytest.raises(ValueError, match="no positive"):
        sample_precision([], lambda _: True)


@given(st.floats(0, 1), st.integers(0, 10**6), st.integers(0, 10**6))
def test_absolute_recall_monotone(p, a, b):
    lo, hi = sorted((a, b))
    assert absolute_recall(p, lo) <= absolute_recall(p, hi)
