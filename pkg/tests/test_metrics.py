import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairal.errors import EmptyInput, LengthMismatch
from fairal.metrics import EvaluationReport, accuracy, evaluate, f1_score


def test_accuracy_examples():
    assert accuracy([0, 1, 1], [0, 1, 1]) == 1.0
    assert accuracy([1, 0], [0, 1]) == 0.0
    assert accuracy([0, 1, 1, 0], [0, 1, 1, 1]) == 0.75


def test_metric_input_errors():
    with pytest.raises(EmptyInput):
        accuracy([], [])
    with pytest.raises(LengthMismatch):
        accuracy([0, 1], [0])
    with pytest.raises(EmptyInput):
        f1_score([], [])
    with pytest.raises(LengthMismatch):
        f1_score([0], [0, 1])


def test_f1_examples():
    assert f1_score([0, 1, 1, 0], [0, 1, 1, 0]) == 1.0
    # two predicted positives, one real: precision 1/2, recall 1
    expected = 2 * 0.5 * 1.0 / (0.5 + 1.0)
    assert abs(f1_score([1, 1, 0, 0], [1, 0, 0, 0]) - expected) <= 1e-15
    assert abs(expected - 2 / 3) <= 1e-15
    assert f1_score([0, 0, 0], [1, 0, 1]) == 0.0


def test_macro_f1_counts_every_class():
    pred, labels = [0, 1, 2, 2], [0, 1, 1, 2]
    per_class = [f1_score(pred, labels, positive_class=k) for k in range(3)]
    assert abs(f1_score(pred, labels, "macro") - np.mean(per_class)) <= 1e-15
    # a class absent from both arguments contributes 0 when n_classes is given
    assert abs(f1_score(pred, labels, "macro", n_classes=4) - np.sum(per_class) / 4) <= 1e-15


labels_pairs = st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 2), min_size=n, max_size=n),
                        st.lists(st.integers(0, 2), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(pair=labels_pairs)
def test_f1_range_and_perfect_score(pair):
    pred, labels = pair
    for k in range(3):
        f = f1_score(pred, labels, positive_class=k)
        assert 0 <= f <= 1
        if k in labels:
            assert (f == 1) == all((p == k) == (y == k) for p, y in zip(pred, labels))
    assert f1_score(labels, labels, "macro") == 1.0


@settings(max_examples=200, deadline=None)
@given(pair=labels_pairs, perm=st.permutations([0, 1, 2]))
def test_accuracy_invariant_under_relabeling(pair, perm):
    pred, labels = pair
    remap = np.array(perm)
    assert accuracy(remap[pred], remap[labels]) == accuracy(pred, labels)


@settings(max_examples=200, deadline=None)
@given(pair=st.integers(1, 30).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n))))
def test_binary_macro_is_mean_of_both_sides(pair):
    pred, labels = pair
    both = (f1_score(pred, labels, positive_class=0) + f1_score(pred, labels, positive_class=1)) / 2
    assert abs(f1_score(pred, labels, "macro", n_classes=2) - both) <= 1e-15


def test_evaluate_report():
    pred = np.array([0, 1, 1, 0])
    labels = np.array([0, 1, 0, 0])
    s = np.array([-1, -1, 1, 1])
    rep = evaluate(pred, labels, 2, iteration=3, n_labeled=16, sensitive=s)
    assert isinstance(rep, EvaluationReport)
    assert (rep.iteration, rep.n_labeled, rep.accuracy) == (3, 16, 0.75)
    assert rep.f1 == f1_score(pred, labels)
    assert rep.unfairness_dp == 0.0
    # corrects: y=0 rows 0 (s=-1) and 3 (s=+1); y=1 row 1 (s=-1)
    assert rep.unfairness_rate == 1.0
    plain = evaluate(pred, labels, 2, 0, 10)
    assert math.isnan(plain.unfairness_dp) and math.isnan(plain.unfairness_rate)
    multi = evaluate(np.array([0, 1, 2]), np.array([0, 1, 1]), 3, 0, 3)
    assert multi.f1 == f1_score([0, 1, 2], [0, 1, 1], "macro", n_classes=3)
