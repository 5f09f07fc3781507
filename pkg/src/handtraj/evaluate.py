"""Evaluation: metric tables over predicted trajectories plus a baseline.

Metrics follow the M-PE / M-PA / F1 column structure: mean per-joint position
error (cm), the Procrustes-aligned variant (one similarity fit per
trajectory), and micro-averaged contact F1 over the whole evaluation set.
The constant-mean baseline repeats the per-step mean training pose for every
evaluation sequence.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np
import torch

from .metrics import contact_f1, mpjpe, mpjpe_pa
from .trajectory import InteractionTrajectory
from .training import TensorBundle, pose_to_joints

CONTACT_THRESHOLD = 0.5


def evaluate_bundle(pred_pose: torch.Tensor, pred_probs: torch.Tensor,
                    bundle: TensorBundle, ids: Sequence[int],
                    threshold: float = CONTACT_THRESHOLD) -> dict:
    """Aggregate and per-sequence metrics for predictions on ``ids``.

    pred_pose (n,T,99), pred_probs (n,T,778), in the order of ``ids``.
    """
    ids = list(ids)
    if pred_pose.shape[0] != len(ids):
        raise ValueError("one prediction per evaluated sequence required")
    sel = torch.as_tensor(ids)
    joints = pose_to_joints(pred_pose, bundle.beta[sel], rig=bundle.rig).numpy()
    gt_joints = bundle.gt_joints[sel].numpy()
    per_seq = []
    for i, seq_id in enumerate(ids):
        per_seq.append({
            "id": int(seq_id),
            "mpjpe_cm": mpjpe(joints[i], gt_joints[i]),
            "mpjpe_pa_cm": mpjpe_pa(joints[i], gt_joints[i]),
        })
    f1 = contact_f1(pred_probs.numpy(), bundle.contacts[sel].numpy() > 0.5,
                    threshold=threshold)
    return {
        "mpjpe_cm": float(np.mean([r["mpjpe_cm"] for r in per_seq])),
        "mpjpe_pa_cm": float(np.mean([r["mpjpe_pa_cm"] for r in per_seq])),
        "contact_f1": f1,
        "num_sequences": len(ids),
        "per_sequence": per_seq,
    }


def baseline_predictions(bundle: TensorBundle, train_ids: Sequence[int],
                         eval_ids: Sequence[int]):
    """Constant-mean baseline: per-step mean training pose and contact rate."""
    train_sel = torch.as_tensor(list(train_ids))
    if len(train_sel) == 0:
        raise ValueError("baseline needs a non-empty training split")
    mean_pose = bundle.pose[train_sel].mean(dim=0)          # (T,99)
    mean_probs = bundle.contacts[train_sel].mean(dim=0)     # (T,778)
    n = len(list(eval_ids))
    return (mean_pose.unsqueeze(0).expand(n, -1, -1).clone(),
            mean_probs.unsqueeze(0).expand(n, -1, -1).clone())


def predictions_to_trajectories(pred_pose: torch.Tensor,
                                pred_probs: torch.Tensor,
                                bundle: TensorBundle, ids: Sequence[int],
                                threshold: float = CONTACT_THRESHOLD
                                ) -> List[InteractionTrajectory]:
    """Package predictions as trajectories (contacts thresholded) for dumping."""
    out = []
    pose = pred_pose.detach().numpy().astype(np.float64)
    contacts = (pred_probs.detach().numpy() >= threshold).astype(np.uint8)
    for i, seq_id in enumerate(ids):
        action, obj, scene = bundle.labels[seq_id]
        t = pose.shape[1]
        out.append(InteractionTrajectory(
            beta=bundle.beta[seq_id].numpy().astype(np.float64),
            articulation=pose[i, :, :90].reshape(t, 15, 6),
            rot6d=pose[i, :, 90:96], trans=pose[i, :, 96:99],
            contacts=contacts[i], action_label=action, object_label=obj,
            scene_label=scene))
    return out


def format_metric_table(rows: dict) -> str:
    """Render {row label: metrics dict} in M-PE / M-PA / F1 columns."""
    lines = [f"{'setting':<28} {'M-PE (cm)':>10} {'M-PA (cm)':>10} {'F1':>8}"]
    for label, m in rows.items():
        lines.append(f"{label:<28} {m['mpjpe_cm']:>10.3f} "
                     f"{m['mpjpe_pa_cm']:>10.3f} {m['contact_f1']:>8.3f}")
    return "\n".join(lines)
