import numpy as np
import pytest
import torch

from handtraj.io import (CONTAINER_VERSION, ContainerError, load_checkpoint,
                         load_trajectories, save_checkpoint,
                         save_trajectories)
from handtraj.rig import NUM_VERTICES
from handtraj.rotations import IDENTITY_ROT6D
from handtraj.trajectory import GridBounds, InteractionTrajectory


def _random_trajectories(rng, n, t=5):
    out = []
    for i in range(n):
        artic = np.tile(IDENTITY_ROT6D, (t, 15, 1)) + rng.normal(size=(t, 15, 6)) * 0.01
        out.append(InteractionTrajectory(
            beta=rng.normal(size=10),
            articulation=artic,
            rot6d=np.tile(IDENTITY_ROT6D, (t, 1)),
            trans=rng.normal(size=(t, 3)),
            contacts=(rng.uniform(size=(t, NUM_VERTICES)) > 0.8).astype(np.uint8),
            action_label=f"act{i % 3}", object_label=f"obj{i % 5}",
            scene_label="kitchen"))
    return out


def test_round_trip_identity(tmp_path):
    rng = np.random.default_rng(0)
    trajs = _random_trajectories(rng, 100)
    path = tmp_path / "set.htrj"
    save_trajectories(path, trajs)
    loaded = load_trajectories(path)
    assert len(loaded) == 100
    for a, b in zip(trajs, loaded):
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.articulation, b.articulation)
        assert np.array_equal(a.rot6d, b.rot6d)
        assert np.array_equal(a.trans, b.trans)
        assert np.array_equal(a.contacts, b.contacts)
        assert (a.action_label, a.object_label, a.scene_label) == \
               (b.action_label, b.object_label, b.scene_label)


def test_empty_set_round_trips(tmp_path):
    path = tmp_path / "empty.htrj"
    save_trajectories(path, [])
    assert load_trajectories(path) == []


def test_corrupted_byte_raises_checksum_error(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "set.htrj"
    save_trajectories(path, _random_trajectories(rng, 3))
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="checksum"):
        load_trajectories(path)


def test_version_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "set.htrj"
    save_trajectories(path, _random_trajectories(rng, 2))
    raw = bytearray(path.read_bytes())
    raw[4] = CONTAINER_VERSION + 9
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="version"):
        load_trajectories(path)


def test_truncation_rejected(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "set.htrj"
    save_trajectories(path, _random_trajectories(rng, 2))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 100])
    with pytest.raises(ContainerError):
        load_trajectories(path)


def test_not_a_container_rejected(tmp_path):
    path = tmp_path / "junk.htrj"
    path.write_bytes(b"definitely not a container")
    with pytest.raises(ContainerError):
        load_trajectories(path)


def test_checkpoint_round_trip_and_kind_check(tmp_path):
    path = tmp_path / "m.ckpt"
    bounds = GridBounds(min_xyz=np.zeros(3), max_xyz=np.ones(3))
    state = {"w": torch.randn(3, 3)}
    save_checkpoint(path, "intercode", {"horizon": 4}, state, bounds=bounds)
    blob = load_checkpoint(path, "intercode")
    assert blob["config"] == {"horizon": 4}
    assert torch.equal(blob["state_dict"]["w"], state["w"])
    assert np.allclose(blob["bounds"].max_xyz, 1.0)
    with pytest.raises(ContainerError, match="expected indexer"):
        load_checkpoint(path, "indexer")


def test_missing_checkpoint_diagnostic(tmp_path):
    with pytest.raises(ContainerError, match="train"):
        load_checkpoint(tmp_path / "nope.ckpt", "intercode")
