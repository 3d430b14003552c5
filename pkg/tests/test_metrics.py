import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenesound import metrics
from scenesound.metrics import MetricCounts


def naive_counts(ref, pred):
    """Cell-by-cell reference implementation."""
    M, K = len(ref), len(ref[0]) if len(ref) else 0
    tp = fp = fn = 0
    fp_k, fn_k, n_k = [0] * K, [0] * K, [0] * K
    for k in range(K):
        for m in range(M):
            r, p = ref[m][k], pred[m][k]
            if r and p:
                tp += 1
            elif p:
                fp += 1
                fp_k[k] += 1
            elif r:
                fn += 1
                fn_k[k] += 1
            n_k[k] += r
    return tp, fp, fn, fp_k, fn_k, n_k


def naive_scores(ref, pred):
    tp, fp, fn, fp_k, fn_k, n_k = naive_counts(ref, pred)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    s = [min(a, b) for a, b in zip(fn_k, fp_k)]
    d = [max(0, a - b) for a, b in zip(fn_k, fp_k)]
    i = [max(0, b - a) for a, b in zip(fn_k, fp_k)]
    n = sum(n_k)
    err = sum(s) + sum(d) + sum(i)
    er = err / n if n else (0.0 if err == 0 else math.inf)
    return (tp, fp, fn, fp_k, fn_k, n_k), (s, d, i), (p, r, f), er


WORKED_REF = [[1, 1, 0], [0, 1, 0]]
WORKED_PRED = [[1, 0, 0], [1, 1, 0]]


def test_worked_example_counts():
    c = metrics.frame_counts(WORKED_REF, WORKED_PRED)
    assert (c.tp, c.fp, c.fn) == (2, 1, 1)
    assert c.fp_k.tolist() == [1, 0, 0]
    assert c.fn_k.tolist() == [0, 1, 0]
    assert c.n_k.tolist() == [1, 2, 0]


def test_worked_example_scores():
    c = metrics.frame_counts(WORKED_REF, WORKED_PRED)
    p, r, f = metrics.precision_recall_f(c)
    assert p == r == f == 2 / 3
    s, d, i = metrics.substitutions_deletions_insertions(c)
    assert s.tolist() == [0, 0, 0]
    assert d.tolist() == [0, 1, 0]
    assert i.tolist() == [1, 0, 0]
    assert metrics.error_rate(c) == 2 / 3


def test_single_frame_substitution():
    c = metrics.frame_counts([[1], [0]], [[0], [1]])
    s, _, _ = metrics.substitutions_deletions_insertions(c)
    assert s.tolist() == [1]
    assert metrics.error_rate(c) == 1.0


def test_perfect_prediction(rng):
    ref = rng.integers(0, 2, (4, 10))
    ref[0, 0] = 1
    c = metrics.frame_counts(ref, ref)
    assert (c.tp, c.fp, c.fn) == (ref.sum(), 0, 0)
    assert metrics.precision_recall_f(c)[2] == 1.0
    assert metrics.error_rate(c) == 0.0


def test_all_zero():
    c = metrics.frame_counts(np.zeros((3, 5)), np.zeros((3, 5)))
    assert (c.tp, c.fp, c.fn) == (0, 0, 0)
    assert metrics.precision_recall_f(c) == (0.0, 0.0, 0.0)
    assert metrics.error_rate(c) == 0.0


def test_error_rate_undefined():
    c = metrics.frame_counts([[0, 0]], [[1, 0]])
    assert metrics.error_rate(c) == math.inf


def test_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        metrics.frame_counts(np.zeros((2, 3)), np.zeros((2, 4)))


def test_non_binary_rejected():
    with pytest.raises(ValueError, match="binary"):
        metrics.frame_counts([[2]], [[1]])


def test_random_rolls_match_naive():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        M, T = rng.integers(1, 7), rng.integers(1, 21)
        ref = rng.integers(0, 2, (M, T))
        pred = rng.integers(0, 2, (M, T))
        counts, sdi, prf, er = naive_scores(ref.tolist(), pred.tolist())
        c = metrics.frame_counts(ref, pred)
        assert (c.tp, c.fp, c.fn) == counts[:3]
        assert c.fp_k.tolist() == counts[3]
        assert c.fn_k.tolist() == counts[4]
        assert c.n_k.tolist() == counts[5]
        assert [a.tolist() for a in metrics.substitutions_deletions_insertions(c)] == list(sdi)
        assert metrics.precision_recall_f(c) == prf
        assert metrics.error_rate(c) == er


rolls = st.integers(1, 6).flatmap(
    lambda m: st.integers(1, 20).flatmap(
        lambda t: st.tuples(
            st.lists(st.lists(st.integers(0, 1), min_size=t, max_size=t), min_size=m, max_size=m),
            st.lists(st.lists(st.integers(0, 1), min_size=t, max_size=t), min_size=m, max_size=m),
        )
    )
)


@settings(max_examples=200, deadline=None)
@given(rolls)
def test_sdi_identities_and_bounds(pair):
    ref, pred = pair
    c = metrics.frame_counts(ref, pred)
    s, d, i = metrics.substitutions_deletions_insertions(c)
    np.testing.assert_array_equal(s + d, c.fn_k)
    np.testing.assert_array_equal(s + i, c.fp_k)
    assert c.fp_k.sum() == c.fp and c.fn_k.sum() == c.fn
    f = metrics.precision_recall_f(c)[2]
    assert 0.0 <= f <= 1.0
    assert metrics.error_rate(c) >= 0.0


@settings(max_examples=100, deadline=None)
@given(rolls, st.randoms(use_true_random=False))
def test_row_permutation_invariance(pair, rnd):
    ref, pred = np.array(pair[0]), np.array(pair[1])
    perm = list(range(len(ref)))
    rnd.shuffle(perm)
    a = metrics.frame_counts(ref, pred)
    b = metrics.frame_counts(ref[perm], pred[perm])
    assert metrics.precision_recall_f(a) == metrics.precision_recall_f(b)
    assert metrics.error_rate(a) == metrics.error_rate(b)


def test_counts_pool_across_clips():
    a = metrics.frame_counts(WORKED_REF, WORKED_PRED)
    b = metrics.frame_counts([[1], [0]], [[0], [1]])
    c = a + b
    assert (c.tp, c.fp, c.fn) == (2, 2, 2)
    assert metrics.error_rate(c) == 3 / 4
    assert metrics.error_rate(MetricCounts.empty() + a) == metrics.error_rate(a)


def test_segment_frames_or_reduces():
    ref = [[1, 0, 0, 0, 0]]
    pred = [[0, 1, 0, 0, 1]]
    c = metrics.frame_counts(ref, pred, segment_frames=2)
    # segments: ref [1,0,0], pred [1,0,1]
    assert (c.tp, c.fp, c.fn) == (1, 1, 0)
    with pytest.raises(ValueError):
        metrics.segment_roll(np.zeros((1, 2)), 0)


def test_per_event_counts():
    per = metrics.per_event_counts(np.array(WORKED_REF), np.array(WORKED_PRED))
    assert [(c.tp, c.fp, c.fn) for c in per] == [(1, 0, 1), (1, 1, 0)]


def test_scene_f():
    assert metrics.scene_f(["a", "b"], ["a", "b"]) == 1.0
    assert metrics.scene_f(["a", "b", "c", "a"], ["a", "b", "c", "c"]) == 0.75
    with pytest.raises(ValueError):
        metrics.scene_f([], [])
    with pytest.raises(ValueError):
        metrics.scene_f(["a"], ["a", "b"])


def test_scene_f_per_class():
    per = metrics.scene_f_per_class(["a", "a", "b", "b"], ["a", "b", "b", "b"])
    assert per["a"] == pytest.approx(2 / 3)
    assert per["b"] == pytest.approx(0.8)


def test_write_report(tmp_path):
    path = tmp_path / "m.csv"
    metrics.write_report(path, [("event_f", "overall", 0.5), ("scene_f", "home", 1.0)], "config_hash=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    rows = list(csv.reader(lines[1:]))
    assert rows == [["metric", "scope", "value"], ["event_f", "overall", "0.500000"], ["scene_f", "home", "1.000000"]]
