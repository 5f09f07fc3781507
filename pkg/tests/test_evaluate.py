import numpy as np
import pytest
import torch

from handtraj.evaluate import (baseline_predictions, evaluate_bundle,
                               format_metric_table,
                               predictions_to_trajectories)
from handtraj.io import load_trajectories, save_trajectories
from handtraj.metrics import mpjpe
from handtraj.synthetic import GeneratorConfig, generate_dataset
from handtraj.training import TensorBundle, pose_to_joints

_T = 5


@pytest.fixture(scope="module")
def bundle():
    ds = generate_dataset(GeneratorConfig(num_sequences=10, horizon=_T, seed=0))
    return TensorBundle(ds)


def test_perfect_predictions_score_zero_error(bundle):
    ids = [1, 4, 7]
    sel = torch.as_tensor(ids)
    probs = bundle.contacts[sel].clone()
    report = evaluate_bundle(bundle.pose[sel], probs, bundle, ids)
    assert report["mpjpe_cm"] < 1e-6
    assert report["mpjpe_pa_cm"] < 1e-6
    assert report["contact_f1"] == pytest.approx(1.0)
    assert report["num_sequences"] == 3
    assert [r["id"] for r in report["per_sequence"]] == ids


def test_evaluate_matches_metric_oracle(bundle):
    ids = [0, 2]
    sel = torch.as_tensor(ids)
    pred = bundle.pose[sel] + 0.01
    report = evaluate_bundle(pred, bundle.contacts[sel], bundle, ids)
    joints = pose_to_joints(pred, bundle.beta[sel]).numpy()
    gt = bundle.gt_joints[sel].numpy()
    ref = np.mean([mpjpe(joints[i], gt[i]) for i in range(2)])
    assert report["mpjpe_cm"] == pytest.approx(ref)
    assert report["mpjpe_pa_cm"] <= report["mpjpe_cm"] + 1e-9


def test_evaluate_rejects_mismatched_batch(bundle):
    with pytest.raises(ValueError):
        evaluate_bundle(bundle.pose[:2], bundle.contacts[:2], bundle, [0])


def test_baseline_is_per_step_training_mean(bundle):
    train_ids = [0, 1, 2, 3]
    pose, probs = baseline_predictions(bundle, train_ids, [8, 9])
    assert pose.shape == (2, _T, 99)
    expect = bundle.pose[torch.tensor(train_ids)].mean(dim=0)
    assert torch.allclose(pose[0], expect)
    assert torch.allclose(pose[0], pose[1])
    assert torch.all((probs >= 0) & (probs <= 1))
    with pytest.raises(ValueError):
        baseline_predictions(bundle, [], [0])


def test_predictions_round_trip_through_container(bundle, tmp_path):
    ids = [3, 5]
    sel = torch.as_tensor(ids)
    trajs = predictions_to_trajectories(bundle.pose[sel],
                                        bundle.contacts[sel], bundle, ids)
    assert len(trajs) == 2
    assert trajs[0].horizon == _T
    # thresholding exact contacts reproduces them
    assert np.array_equal(trajs[0].contacts,
                          bundle.contacts[ids[0]].numpy().astype(np.uint8))
    path = tmp_path / "preds.htrj"
    save_trajectories(path, trajs)
    loaded = load_trajectories(path)
    assert np.allclose(loaded[1].trans, trajs[1].trans)
    assert loaded[0].action_label == bundle.labels[3][0]


def test_metric_table_layout():
    rows = {
        "model": {"mpjpe_cm": 1.234, "mpjpe_pa_cm": 0.9, "contact_f1": 0.87},
        "baseline": {"mpjpe_cm": 5.0, "mpjpe_pa_cm": 4.0, "contact_f1": 0.5},
    }
    table = format_metric_table(rows)
    lines = table.splitlines()
    assert len(lines) == 3
    assert "M-PE (cm)" in lines[0] and "M-PA (cm)" in lines[0]
    assert lines[0].rstrip().endswith("F1")
    assert "1.234" in lines[1] and "model" in lines[1]
    assert "baseline" in lines[2]
