import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lungx.metrics import ConfusionCounts, MetricReport, auc, compute_metrics, confusion, report


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_hand_counts():
    m = compute_metrics(ConfusionCounts(tp=3, fp=1, tn=5, fn=1))
    assert (m["precision"], m["recall"], m["f1"], m["accuracy"]) == (0.75, 0.75, 0.75, 0.8)
    assert m["undefined"] == ()


def test_all_correct():
    r = report([0.9, 0.8, 0.1], [1, 1, 0])
    assert r.accuracy == r.f1 == r.auc == 1.0


def test_degenerate_precision_flagged():
    m = compute_metrics(confusion([0.1, 0.2], [0, 0]))
    assert m["precision"] == 0.0 and "precision" in m["undefined"]


def test_threshold_is_inclusive():
    assert confusion([0.5], [1]) == ConfusionCounts(1, 0, 0, 0)


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion([0.1, 0.2], [1])


@pytest.mark.parametrize("scores, labels, expected", [
    ([0.9, 0.1], [1, 0], 1.0),
    ([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0], 0.5),
    ([0.8, 0.6, 0.4, 0.2], [1, 0, 1, 0], 0.75),
])
def test_auc_examples(scores, labels, expected):
    assert auc(scores, labels) == expected


def test_auc_single_class_rejected():
    with pytest.raises(ValueError, match="both classes"):
        auc([0.1, 0.3], [1, 1])


def test_report_single_class_flags_auc():
    r = report([0.7, 0.2, 0.9], [1, 1, 1])
    assert r.auc is None and "auc" in r.undefined
    assert r.recall == pytest.approx(2 / 3)


def test_auc_matches_brute_force_on_200_instances():
    rng = np.random.default_rng(2024)
    for i in range(200):
        n = int(rng.integers(2, 1001))
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        # coarse grid on half the instances forces many ties
        scores = rng.integers(0, 10, n) / 10 if i % 2 else rng.random(n)
        assert auc(scores, labels) == brute_auc(scores, labels)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-80, 80), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_invariant_under_monotone_transform(pairs):
    # grid spacing 1/8 keeps exp() strictly increasing after float rounding
    scores = np.array([p[0] / 8 for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert auc(np.exp(scores / 3) * 7 + 1, labels) == pytest.approx(auc(scores, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=50))
def test_accuracy_and_f1_identities(pairs):
    probs = [p for p, _ in pairs]
    labels = [y for _, y in pairs]
    c = confusion(probs, labels)
    m = compute_metrics(c)
    assert c.total == len(pairs)
    assert m["accuracy"] == (c.tp + c.tn) / c.total
    if "precision" not in m["undefined"] and "recall" not in m["undefined"] and m["precision"] + m["recall"] > 0:
        p, r = m["precision"], m["recall"]
        assert m["f1"] == pytest.approx(2 * p * r / (p + r))


def test_report_round_trip():
    r = report([0.9, 0.3, 0.6, 0.1], [1, 0, 0, 1], loss=0.25)
    assert MetricReport.from_dict(r.to_dict()) == r
