"""Trajectory and contact evaluation metrics.

MPJPE is reported in centimeters over (T, 21) joints. The Procrustes-aligned
variant fits a single similarity transform (rotation, translation, scale)
over the whole trajectory before measuring. Contact F1 binarizes predicted
probabilities and micro-averages over all (timestep, vertex) pairs by
default; macro (per-timestep) averaging is available as an option.
"""

from __future__ import annotations

import numpy as np

M_TO_CM = 100.0


def _check_joint_shapes(pred: np.ndarray, gt: np.ndarray):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise ValueError(f"joint arrays must match (T, J, 3); "
                         f"got {pred.shape} vs {gt.shape}")
    return pred, gt


def mpjpe(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """Mean per-joint position error in centimeters."""
    pred, gt = _check_joint_shapes(pred_joints, gt_joints)
    return float(np.linalg.norm(pred - gt, axis=-1).mean() * M_TO_CM)


def similarity_align(pred: np.ndarray, gt: np.ndarray):
    """Best-fit similarity transform (s, R, t) minimizing ||s R p + t - g||.

    Solved in closed form over all points jointly (Umeyama / orthogonal
    Procrustes via SVD). Inputs are (N, 3) point sets.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    pc, gc = pred - mu_p, gt - mu_g
    var_p = (pc ** 2).sum() / len(pred)
    if var_p < 1e-18:
        raise ValueError("degenerate point set: all predicted points coincide")
    cov = gc.T @ pc / len(pred)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    diag = np.diag([1.0, 1.0, d])
    rot = u @ diag @ vt
    scale = np.trace(np.diag(s) @ diag) / var_p
    trans = mu_g - scale * rot @ mu_p
    return scale, rot, trans


def mpjpe_pa(pred_joints: np.ndarray, gt_joints: np.ndarray) -> float:
    """MPJPE after one similarity alignment of the entire trajectory (cm)."""
    pred, gt = _check_joint_shapes(pred_joints, gt_joints)
    flat_p, flat_g = pred.reshape(-1, 3), gt.reshape(-1, 3)
    scale, rot, trans = similarity_align(flat_p, flat_g)
    aligned = (scale * flat_p @ rot.T + trans).reshape(pred.shape)
    return mpjpe(aligned, gt)


def contact_f1(pred_probs: np.ndarray, gt: np.ndarray,
               threshold: float = 0.5, average: str = "micro") -> float:
    """F1 of thresholded contact predictions against binary ground truth."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    gt = np.asarray(gt)
    if pred_probs.shape != gt.shape:
        raise ValueError("prediction and ground truth shapes differ")
    pred = pred_probs >= threshold
    gt = gt.astype(bool)

    def f1_of(p, g):
        tp = np.logical_and(p, g).sum()
        fp = np.logical_and(p, ~g).sum()
        fn = np.logical_and(~p, g).sum()
        if tp == 0:
            # covers P + R = 0, defined as F1 = 0
            return 0.0
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        return 2 * precision * recall / (precision + recall)

    if average == "micro":
        return float(f1_of(pred.reshape(-1), gt.reshape(-1)))
    if average == "macro":
        return float(np.mean([f1_of(pred[t].reshape(-1), gt[t].reshape(-1))
                              for t in range(pred.shape[0])]))
    raise ValueError(f"unknown averaging mode {average!r}")
