import numpy as np
import pytest

from handtraj.metrics import contact_f1, mpjpe, mpjpe_pa, similarity_align
from handtraj.rotations import random_rotation


def _loop_mpjpe(pred, gt):
    total, count = 0.0, 0
    for t in range(pred.shape[0]):
        for j in range(pred.shape[1]):
            total += float(np.sqrt(((pred[t, j] - gt[t, j]) ** 2).sum()))
            count += 1
    return 100.0 * total / count


def test_mpjpe_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred = rng.normal(size=(5, 21, 3))
        gt = rng.normal(size=(5, 21, 3))
        assert abs(mpjpe(pred, gt) - _loop_mpjpe(pred, gt)) < 1e-9


def test_mpjpe_pa_recovers_planted_similarity():
    rng = np.random.default_rng(1)
    gt = rng.normal(size=(8, 21, 3))
    r = random_rotation(rng)
    s, t = 1.7, rng.normal(size=3)
    pred = (gt.reshape(-1, 3) @ r.T * s + t).reshape(gt.shape)
    assert mpjpe_pa(pred, gt) < 1e-5
    assert mpjpe(pred, gt) > 1.0  # unaligned error is large


def test_mpjpe_pa_never_exceeds_mpjpe():
    rng = np.random.default_rng(2)
    for _ in range(100):
        pred = rng.normal(size=(4, 21, 3))
        gt = rng.normal(size=(4, 21, 3))
        assert mpjpe_pa(pred, gt) <= mpjpe(pred, gt) + 1e-9


def test_similarity_align_degenerate_rejected():
    with pytest.raises(ValueError):
        similarity_align(np.zeros((10, 3)), np.random.default_rng(0).normal(size=(10, 3)))


def _confusion_f1(pred, gt):
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    fn = int(np.sum(~pred & gt))
    if tp == 0:
        return 0.0
    p = tp / (tp + fp)
    r = tp / (tp + fn)
    return 2 * p * r / (p + r)


def test_contact_f1_matches_confusion_matrix_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        probs = rng.uniform(size=(6, 30))
        gt = rng.uniform(size=(6, 30)) > 0.5
        expected = _confusion_f1(probs >= 0.5, gt)
        assert contact_f1(probs, gt) == expected


def test_contact_f1_precision_one_recall_half():
    # P = 1, R = 0.5 -> F1 = 2/3
    gt = np.array([[True, True, False, False]])
    probs = np.array([[0.9, 0.1, 0.1, 0.1]])
    assert contact_f1(probs, gt) == pytest.approx(2.0 / 3.0)


def test_contact_f1_zero_when_no_true_positives():
    gt = np.array([[True, False]])
    probs = np.array([[0.0, 0.9]])
    assert contact_f1(probs, gt) == 0.0
    # no positives anywhere also defined as 0
    assert contact_f1(np.zeros((2, 4)), np.zeros((2, 4), dtype=bool)) == 0.0


def test_contact_f1_macro_averages_per_step():
    probs = np.array([[0.9, 0.9], [0.1, 0.1]])
    gt = np.array([[True, True], [True, True]])
    assert contact_f1(probs, gt, average="macro") == pytest.approx(0.5)


def test_contact_f1_input_validation():
    with pytest.raises(ValueError):
        contact_f1(np.zeros((2, 2)), np.zeros((2, 2)), threshold=1.0)
    with pytest.raises(ValueError):
        contact_f1(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        contact_f1(np.zeros((2, 2)), np.zeros((2, 2)), average="weird")
