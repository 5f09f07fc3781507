import numpy as np
import pytest
import torch

from handtraj.hand import (HandMesh, HandPoseParams, HandShapeParams,
                           apply_global, fk_batch, forward_kinematics)
from handtraj.rig import NUM_JOINTS, NUM_VERTICES, default_rig
from handtraj.rotations import matrix_to_rot6d, random_rotation


def _random_pose(rng, scale=0.3):
    artic = []
    for _ in range(15):
        r = random_rotation(rng)
        # blend toward identity to keep articulation moderate
        blended = np.eye(3) + scale * (r - np.eye(3))
        q, _ = np.linalg.qr(blended)
        q = q * np.sign(np.linalg.det(q))
        artic.append(matrix_to_rot6d(q))
    return HandPoseParams(articulation=np.stack(artic),
                          global_rot6d=matrix_to_rot6d(random_rotation(rng)),
                          global_trans=rng.normal(size=3) * 0.1)


def test_identity_pose_returns_template():
    rig = default_rig()
    mesh, joints = forward_kinematics(HandShapeParams(), HandPoseParams(), rig)
    assert np.allclose(mesh.vertices, rig.template, atol=1e-12)
    assert mesh.vertices.shape == (NUM_VERTICES, 3)
    assert joints.joints.shape == (NUM_JOINTS, 3)


def test_nan_inputs_rejected():
    beta = torch.zeros(10)
    artic = torch.zeros(15, 6)
    artic[:, 0] = 1.0
    artic[:, 4] = 1.0
    glob = torch.tensor([1.0, 0, 0, 0, 1.0, 0])
    trans = torch.zeros(3)
    bad = trans.clone()
    bad[0] = float("nan")
    with pytest.raises(ValueError):
        fk_batch(beta, artic, glob, bad)


def test_translation_gradient_is_identity():
    # mean vertex position moves 1:1 with global translation
    beta = torch.zeros(10, dtype=torch.float64)
    artic = torch.zeros(15, 6, dtype=torch.float64)
    artic[:, 0] = 1.0
    artic[:, 4] = 1.0
    glob = torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=torch.float64)
    trans = torch.zeros(3, dtype=torch.float64, requires_grad=True)
    verts, _ = fk_batch(beta, artic, glob, trans)
    grad = torch.autograd.grad(verts.mean(dim=0).sum(), trans)[0]
    assert torch.allclose(grad, torch.ones(3, dtype=torch.float64), atol=1e-12)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    pose = _random_pose(rng)
    beta = torch.tensor(rng.normal(size=10) * 0.2, requires_grad=True)
    artic = torch.tensor(pose.articulation, requires_grad=True)
    glob = torch.tensor(pose.global_rot6d, requires_grad=True)
    trans = torch.tensor(pose.global_trans, requires_grad=True)
    weights = torch.tensor(rng.normal(size=(NUM_VERTICES, 3)))

    def scalar(b, a, g, t):
        verts, _ = fk_batch(b, a, g, t)
        return (verts * weights).sum()

    loss = scalar(beta, artic, glob, trans)
    grads = torch.autograd.grad(loss, (beta, artic, glob, trans))

    step = 1e-5
    params = (beta, artic, glob, trans)
    for idx, (tensor, grad) in enumerate(zip(params, grads)):
        flat = tensor.detach().reshape(-1)
        # probe a subset of coordinates to keep runtime low
        for i in range(0, flat.numel(), max(flat.numel() // 8, 1)):
            probe = [t.detach().clone() for t in params]
            probe[idx].reshape(-1)[i] += step
            hi = scalar(*probe)
            probe[idx].reshape(-1)[i] -= 2 * step
            lo = scalar(*probe)
            fd = float((hi - lo) / (2 * step))
            an = float(grad.reshape(-1)[i])
            assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-3)


def test_apply_global_identity_and_translation():
    rig = default_rig()
    mesh = HandMesh(vertices=rig.template.copy(), faces=rig.faces)
    same = apply_global(mesh, np.array([1.0, 0, 0, 0, 1.0, 0]), np.zeros(3))
    assert np.allclose(same.vertices, mesh.vertices)
    t = np.array([0.1, -0.2, 0.3])
    moved = apply_global(mesh, np.array([1.0, 0, 0, 0, 1.0, 0]), t)
    assert np.allclose(moved.vertices, mesh.vertices + t)


def test_apply_global_preserves_pairwise_distances():
    rng = np.random.default_rng(4)
    rig = default_rig()
    mesh = HandMesh(vertices=rig.template.copy(), faces=rig.faces)
    moved = apply_global(mesh, matrix_to_rot6d(random_rotation(rng)),
                         rng.normal(size=3))
    sub = rng.choice(NUM_VERTICES, size=40, replace=False)
    d0 = np.linalg.norm(mesh.vertices[sub, None] - mesh.vertices[None, sub],
                        axis=-1)
    d1 = np.linalg.norm(moved.vertices[sub, None] - moved.vertices[None, sub],
                        axis=-1)
    nz = d0 > 0
    assert np.max(np.abs(d1[nz] - d0[nz]) / d0[nz]) < 1e-9


def test_apply_global_is_group_action():
    rng = np.random.default_rng(5)
    rig = default_rig()
    mesh = HandMesh(vertices=rig.template.copy(), faces=rig.faces)
    r1, t1 = random_rotation(rng), rng.normal(size=3)
    r2, t2 = random_rotation(rng), rng.normal(size=3)
    two_step = apply_global(apply_global(mesh, matrix_to_rot6d(r2), t2),
                            matrix_to_rot6d(r1), t1)
    rc, tc = r1 @ r2, r1 @ t2 + t1
    one_step = apply_global(mesh, matrix_to_rot6d(rc), tc)
    assert np.allclose(two_step.vertices, one_step.vertices, atol=1e-9)


def test_fk_batch_shapes_and_determinism():
    rng = np.random.default_rng(6)
    beta = torch.tensor(rng.normal(size=(4, 10)) * 0.2)
    artic = torch.zeros(4, 15, 6, dtype=torch.float64)
    artic[..., 0] = 1.0
    artic[..., 4] = 1.0
    glob = torch.tensor([1.0, 0, 0, 0, 1.0, 0],
                        dtype=torch.float64).expand(4, 6)
    trans = torch.tensor(rng.normal(size=(4, 3)))
    v1, j1 = fk_batch(beta, artic, glob, trans)
    v2, j2 = fk_batch(beta, artic, glob, trans)
    assert v1.shape == (4, NUM_VERTICES, 3) and j1.shape == (4, NUM_JOINTS, 3)
    assert torch.equal(v1, v2) and torch.equal(j1, j2)
