"""Parametric hand layer: linear blend skinning over a rig asset.

``fk_batch`` is the differentiable torch path used inside training losses;
``forward_kinematics`` / ``apply_global`` are numpy-facing conveniences built
on top of it. Pose = 15 articulation rotations (6D) + global rotation (6D) +
global translation (meters); shape = 10 basis coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .rig import (NUM_ARTIC_JOINTS, NUM_JOINTS, NUM_KIN_NODES,
                  NUM_SHAPE_PARAMS, NUM_VERTICES, Rig, default_rig)
from .rotations import IDENTITY_ROT6D, rot6d_to_matrix, rot6d_to_matrix_torch


@dataclass
class HandShapeParams:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(NUM_SHAPE_PARAMS))

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.beta.shape != (NUM_SHAPE_PARAMS,):
            raise ValueError(f"beta must have {NUM_SHAPE_PARAMS} entries")
        if not np.all(np.isfinite(self.beta)):
            raise ValueError("beta must be finite")


@dataclass
class HandPoseParams:
    articulation: np.ndarray = field(
        default_factory=lambda: np.tile(IDENTITY_ROT6D, (NUM_ARTIC_JOINTS, 1)))
    global_rot6d: np.ndarray = field(default_factory=lambda: IDENTITY_ROT6D.copy())
    global_trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.articulation = np.asarray(self.articulation, dtype=np.float64)
        if self.articulation.shape == (NUM_ARTIC_JOINTS * 6,):
            self.articulation = self.articulation.reshape(NUM_ARTIC_JOINTS, 6)
        if self.articulation.shape != (NUM_ARTIC_JOINTS, 6):
            raise ValueError(f"articulation shape {self.articulation.shape}")
        self.global_rot6d = np.asarray(self.global_rot6d, dtype=np.float64)
        self.global_trans = np.asarray(self.global_trans, dtype=np.float64)
        if self.global_rot6d.shape != (6,) or self.global_trans.shape != (3,):
            raise ValueError("global transform must be 6 + 3 values")
        for arr in (self.articulation, self.global_rot6d, self.global_trans):
            if not np.all(np.isfinite(arr)):
                raise ValueError("pose parameters must be finite")

    def flat(self) -> np.ndarray:
        """99-vector: articulation (90) | global 6D (6) | translation (3)."""
        return np.concatenate([self.articulation.reshape(-1),
                               self.global_rot6d, self.global_trans])


@dataclass
class HandMesh:
    vertices: np.ndarray  # (778, 3) meters
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.shape != (NUM_VERTICES, 3):
            raise ValueError(f"expected {NUM_VERTICES} vertices")
        if self.faces.min() < 0 or self.faces.max() >= NUM_VERTICES:
            raise ValueError("face indices out of range")


@dataclass
class HandJoints:
    joints: np.ndarray  # (21, 3) meters

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.shape != (NUM_JOINTS, 3):
            raise ValueError(f"expected {NUM_JOINTS} joints")


class RigTensors:
    """Rig arrays as torch tensors, cached per (rig, dtype)."""

    def __init__(self, rig: Rig, dtype=torch.float64):
        self.template = torch.as_tensor(rig.template, dtype=dtype)
        self.weights = torch.as_tensor(rig.weights, dtype=dtype)
        self.kin_regressor = torch.as_tensor(rig.kin_regressor, dtype=dtype)
        self.joint_regressor = torch.as_tensor(rig.joint_regressor, dtype=dtype)
        self.shape_basis = torch.as_tensor(rig.shape_basis, dtype=dtype)
        self.parents = rig.parents.tolist()


_TENSOR_CACHE: dict = {}


def rig_tensors(rig: Rig | None = None, dtype=torch.float64) -> RigTensors:
    rig = rig if rig is not None else default_rig()
    key = (id(rig), dtype)
    if key not in _TENSOR_CACHE:
        _TENSOR_CACHE[key] = RigTensors(rig, dtype)
    return _TENSOR_CACHE[key]


def fk_batch(beta: torch.Tensor, artic6d: torch.Tensor, global6d: torch.Tensor,
             trans: torch.Tensor, rig: Rig | None = None):
    """Differentiable LBS forward kinematics.

    beta (..., 10), artic6d (..., 15, 6) or (..., 90), global6d (..., 6),
    trans (..., 3) -> vertices (..., 778, 3), joints (..., 21, 3).
    """
    if artic6d.shape[-1] == NUM_ARTIC_JOINTS * 6:
        artic6d = artic6d.reshape(*artic6d.shape[:-1], NUM_ARTIC_JOINTS, 6)
    for name, t in (("beta", beta), ("artic6d", artic6d),
                    ("global6d", global6d), ("trans", trans)):
        if not torch.isfinite(t).all():
            raise ValueError(f"non-finite values in {name}")
    batch = beta.shape[:-1]
    rt = rig_tensors(rig, dtype=beta.dtype)

    v_shaped = rt.template + torch.einsum("...d,dvc->...vc", beta, rt.shape_basis)
    j_rest = torch.einsum("jv,...vc->...jc", rt.kin_regressor, v_shaped)  # (...,16,3)

    rots = torch.cat([rot6d_to_matrix_torch(global6d).unsqueeze(-3),
                      rot6d_to_matrix_torch(artic6d)], dim=-3)  # (...,16,3,3)

    world_r = [None] * NUM_KIN_NODES
    world_t = [None] * NUM_KIN_NODES
    world_r[0] = rots[..., 0, :, :]
    world_t[0] = j_rest[..., 0, :] + trans
    for i in range(1, NUM_KIN_NODES):
        p = rt.parents[i]
        offset = j_rest[..., i, :] - j_rest[..., p, :]
        world_r[i] = world_r[p] @ rots[..., i, :, :]
        world_t[i] = world_t[p] + (world_r[p] @ offset.unsqueeze(-1)).squeeze(-1)

    wr = torch.stack(world_r, dim=-3)  # (...,16,3,3)
    wt = torch.stack(world_t, dim=-2)  # (...,16,3)
    # skinning transform maps rest vertices: v -> R_k (v - j_k) + t_k
    skin_t = wt - (wr @ j_rest.unsqueeze(-1)).squeeze(-1)  # (...,16,3)

    # blend transforms per vertex, then apply (cheaper than posing per node)
    blend_r = torch.einsum("vk,...kab->...vab", rt.weights, wr)  # (...,778,3,3)
    blend_t = torch.einsum("vk,...ka->...va", rt.weights, skin_t)  # (...,778,3)
    verts = (blend_r @ v_shaped.unsqueeze(-1)).squeeze(-1) + blend_t
    joints = torch.einsum("jv,...vc->...jc", rt.joint_regressor, verts)
    assert verts.shape == (*batch, NUM_VERTICES, 3)
    return verts, joints


def forward_kinematics(shape: HandShapeParams, pose: HandPoseParams,
                       rig: Rig | None = None):
    """Numpy convenience wrapper; returns (HandMesh, HandJoints)."""
    rig = rig if rig is not None else default_rig()
    beta = torch.as_tensor(shape.beta, dtype=torch.float64)
    artic = torch.as_tensor(pose.articulation, dtype=torch.float64)
    glob = torch.as_tensor(pose.global_rot6d, dtype=torch.float64)
    trans = torch.as_tensor(pose.global_trans, dtype=torch.float64)
    with torch.no_grad():
        verts, joints = fk_batch(beta, artic, glob, trans, rig)
    return (HandMesh(vertices=verts.numpy(), faces=rig.faces),
            HandJoints(joints=joints.numpy()))


def apply_global(mesh: HandMesh, rot6d, trans) -> HandMesh:
    """Rigidly transform a mesh: v' = R(rot6d) v + trans."""
    rot = rot6d_to_matrix(np.asarray(rot6d, dtype=np.float64))
    trans = np.asarray(trans, dtype=np.float64)
    return HandMesh(vertices=mesh.vertices @ rot.T + trans, faces=mesh.faces)
