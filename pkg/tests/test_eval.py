import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aefabmap.errors import ArgumentError, DimensionError, UndefinedMetric
from aefabmap.evaluation import (
    ConfusionMatrix,
    accuracy,
    causal_mask,
    offdiag_mask,
    parse_thresholds,
    recall,
    sweep,
    write_sweep_csv,
)


def _gt(rng, m, rate=0.3):
    g = (rng.random((m, m)) < rate).astype(int)
    return np.maximum(g, g.T)


def test_scores_equal_ground_truth(rng):
    gt = _gt(rng, 10)
    cm = ConfusionMatrix(gt.astype(float))
    assert recall(cm, gt, 0.5) == 1.0
    assert accuracy(cm, gt, 0.5) == 1.0


def test_zero_scores_zero_recall(rng):
    gt = _gt(rng, 8)
    assert recall(ConfusionMatrix(np.zeros((8, 8))), gt, 0.5) == 0.0


def test_half_positive_accuracy():
    m = 4
    gt = np.zeros((m, m), int)
    mask = offdiag_mask(m)
    idx = np.argwhere(mask)
    for i, j in idx[: len(idx) // 2]:
        gt[i, j] = 1
    assert accuracy(ConfusionMatrix(np.ones((m, m))), gt, 0.5) == 0.5


def _loop_counts(scores, gt, mask, t):
    tp = pred = pos = 0
    m = len(scores)
    for i in range(m):
        for j in range(m):
            if not mask[i][j] or i == j:
                continue
            hit = scores[i][j] > t
            pred += hit
            pos += gt[i][j] == 1
            tp += hit and gt[i][j] == 1
    return tp, pred, pos


def test_counting_oracle(rng):
    for _ in range(100):
        scores = rng.random((20, 20))
        gt = _gt(rng, 20)
        mask = rng.random((20, 20)) < 0.8
        t = float(rng.random())
        cm = ConfusionMatrix(scores, mask)
        tp, pred, pos = _loop_counts(scores.tolist(), gt.tolist(), mask.tolist(), t)
        if pos:
            assert recall(cm, gt, t) == tp / pos
        if pred:
            assert accuracy(cm, gt, t) == tp / pred


def test_sweep_on_ground_truth(rng):
    gt = _gt(rng, 10)
    rows = sweep(ConfusionMatrix(gt.astype(float)), gt, [0.0, 1.0])
    assert rows[0].recall == 1.0 and rows[0].defined
    assert rows[1].accuracy is None and rows[1].predicted_positives == 0
    assert not rows[1].defined


@settings(max_examples=100)
@given(st.integers(2, 15), st.integers(0, 2**32 - 1))
def test_recall_non_increasing(m, seed):
    r = np.random.default_rng(seed)
    gt = _gt(r, m, 0.5)
    gt[1, 0] = gt[0, 1] = 1
    cm = ConfusionMatrix(r.random((m, m)))
    rs = [row.recall for row in sweep(cm, gt, np.linspace(0, 1, 21))]
    assert all(b <= a for a, b in zip(rs, rs[1:]))
    assert all(0 <= v <= 1 for v in rs)


@settings(max_examples=100)
@given(st.integers(2, 12), st.floats(0.001, 0.999), st.integers(0, 2**32 - 1))
def test_perfect_scores_any_threshold(m, t, seed):
    gt = _gt(np.random.default_rng(seed), m, 0.5)
    gt[1, 0] = gt[0, 1] = 1
    cm = ConfusionMatrix(gt.astype(float))
    assert recall(cm, gt, t) == 1.0 and accuracy(cm, gt, t) == 1.0


def test_sweep_consistent_with_direct_calls(rng):
    gt = _gt(rng, 12)
    cm = ConfusionMatrix(rng.random((12, 12)))
    (row,) = sweep(cm, gt, [0.4])
    assert row.recall == recall(cm, gt, 0.4)
    assert row.accuracy == accuracy(cm, gt, 0.4)


def test_undefined_metrics():
    cm = ConfusionMatrix(np.zeros((3, 3)))
    with pytest.raises(UndefinedMetric):
        recall(cm, np.eye(3, dtype=int), 0.5)
    with pytest.raises(UndefinedMetric):
        accuracy(cm, np.ones((3, 3), int), 0.5)


def test_diagonal_never_scored():
    cm = ConfusionMatrix(np.eye(3), np.ones((3, 3), bool))
    assert not cm.mask.diagonal().any()


def test_guard_band():
    m = 6
    gt = np.ones((m, m), int)
    cm = ConfusionMatrix(np.ones((m, m))).with_guard(1)
    assert cm.mask.sum() == m * m - m - 2 * (m - 1)
    assert recall(cm, gt, 0.5) == 1.0


def test_causal_mask():
    assert causal_mask(3).astype(int).tolist() == [[0, 0, 0], [1, 0, 0], [1, 1, 0]]


def test_shape_errors():
    with pytest.raises(DimensionError):
        ConfusionMatrix(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        recall(ConfusionMatrix(np.zeros((2, 2))), np.zeros((3, 3)), 0.5)


def test_parse_thresholds():
    assert len(parse_thresholds("0.1:0.9:0.1")) == 9
    assert parse_thresholds("0.1:0.9:0.1")[-1] == 0.9
    assert parse_thresholds("0.5, 0.99") == [0.5, 0.99]
    with pytest.raises(ArgumentError):
        parse_thresholds("0.1:0.9")
    with pytest.raises(ArgumentError):
        sweep(ConfusionMatrix(np.zeros((2, 2))), np.zeros((2, 2)), [])


def test_sweep_csv(tmp_path, rng):
    gt = _gt(rng, 5)
    path = tmp_path / "pr.csv"
    write_sweep_csv(sweep(ConfusionMatrix(gt.astype(float)), gt, [0.5, 1.0]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "threshold,recall,accuracy,tp,predicted_positives,gt_positives"
    assert lines[2].split(",")[2] == ""
