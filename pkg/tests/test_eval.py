"""Confusion tally and mean IoU."""

import json

import numpy as np
import pytest

from pointlift.evaluate import ConfusionMatrix, confusion, iou_from_counts, miou, write_metrics
from pointlift.projection import UNLABELED


def test_perfect_predictions_diagonal():
    gt = np.array([0, 1, 2, 1, 0], dtype=np.uint16)
    cm = confusion(gt, gt, 3)
    assert np.array_equal(cm.counts, np.diag([2, 2, 1]))
    ious, mean = miou(cm)
    assert mean == 1.0
    assert np.array_equal(ious, np.ones(3))


def test_all_unlabeled_predictions():
    gt = np.array([0, 1, 2], dtype=np.uint16)
    pred = np.full(3, UNLABELED, dtype=np.uint16)
    cm = confusion(gt, pred, 3)
    assert cm.counts.sum() == 0
    assert np.array_equal(cm.unlabeled_pred, [1, 1, 1])
    _, mean = miou(cm)
    assert mean == 0.0


def test_unlabeled_ground_truth_ignored():
    gt = np.array([0, UNLABELED, 1], dtype=np.uint16)
    pred = np.array([0, 0, 1], dtype=np.uint16)
    cm = confusion(gt, pred, 2)
    assert cm.ignored == 1
    assert cm.total == 3
    assert miou(cm)[1] == 1.0


def test_random_cases_match_brute_force():
    rng = np.random.default_rng(20)
    for _ in range(25):
        gt = rng.integers(0, 3, size=20).astype(np.uint16)
        pred = rng.integers(0, 4, size=20).astype(np.uint16)
        pred[pred == 3] = UNLABELED
        cm = confusion(gt, pred, 3)
        brute = np.zeros((3, 3), dtype=np.int64)
        brute_unl = np.zeros(3, dtype=np.int64)
        for g, p in zip(gt, pred):
            if p == UNLABELED:
                brute_unl[g] += 1
            else:
                brute[g, p] += 1
        assert np.array_equal(cm.counts, brute)
        assert np.array_equal(cm.unlabeled_pred, brute_unl)
        # brute-force IoU per class
        ious, mean = miou(cm)
        for c in range(3):
            tp = brute[c, c]
            fp = brute[:, c].sum() - tp
            fn = brute[c, :].sum() - tp + brute_unl[c]
            if tp + fp + fn > 0:
                assert ious[c] == pytest.approx(tp / (tp + fp + fn))


def test_swapped_two_classes_zero_miou():
    gt = np.array([0, 0, 1, 1], dtype=np.uint16)
    pred = np.array([1, 1, 0, 0], dtype=np.uint16)
    assert miou(confusion(gt, pred, 2))[1] == 0.0


def test_hand_counts_mean():
    # per-class (TP, FP, FN) = (5,1,2), (4,0,0), (3,3,3)
    ious = [iou_from_counts(5, 1, 2), iou_from_counts(4, 0, 0), iou_from_counts(3, 3, 3)]
    assert ious[0] == pytest.approx(0.625)
    assert ious[1] == 1.0
    assert ious[2] == pytest.approx(1 / 3)
    assert 100 * np.mean(ious) == pytest.approx(65.28, abs=0.005)


def test_absent_class_excluded_from_mean():
    gt = np.array([0, 0, 1], dtype=np.uint16)
    pred = np.array([0, 0, 1], dtype=np.uint16)
    ious, mean = miou(confusion(gt, pred, 3))
    assert np.isnan(ious[2])
    assert mean == 1.0


def test_length_mismatch_rejected():
    with pytest.raises(ValueError, match="mismatch"):
        confusion(np.zeros(3, dtype=np.uint16), np.zeros(4, dtype=np.uint16), 2)


def test_out_of_range_labels_rejected():
    gt = np.array([5], dtype=np.uint16)
    with pytest.raises(ValueError, match="class range"):
        confusion(gt, gt, 3)
    with pytest.raises(ValueError, match="class range"):
        confusion(np.array([0], dtype=np.uint16), np.array([5], dtype=np.uint16), 3)


def test_negative_counts_rejected():
    with pytest.raises(ValueError, match="non-negative"):
        ConfusionMatrix(counts=np.array([[-1, 0], [0, 0]]), unlabeled_pred=np.zeros(2))


def test_write_metrics_json(tmp_path):
    gt = np.array([0, 0, 1, 1], dtype=np.uint16)
    pred = np.array([0, 0, 1, 0], dtype=np.uint16)
    cm = confusion(gt, pred, 2)
    path = str(tmp_path / "metrics.json")
    write_metrics(path, cm, ["road", "car"])
    with open(path) as fh:
        obj = json.load(fh)
    assert obj["per_class_iou"]["road"] == pytest.approx(100 * 2 / 3)
    assert obj["per_class_iou"]["car"] == 50.0
    assert obj["miou"] == pytest.approx(100 * (2 / 3 + 0.5) / 2, abs=1e-3)
    assert obj["ignored"] == 0


def test_write_metrics_perfect_is_100(tmp_path):
    gt = np.array([0, 1], dtype=np.uint16)
    path = str(tmp_path / "metrics.json")
    write_metrics(path, confusion(gt, gt, 2), ["a", "b"])
    with open(path) as fh:
        assert json.load(fh)["miou"] == 100.0
