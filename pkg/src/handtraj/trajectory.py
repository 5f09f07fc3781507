"""Interaction-trajectory data model and contact-point voxel encoding.

A trajectory is T timesteps of hand pose parameters expressed in the
reference frame (camera frame of timestep 0), one shape vector held fixed
over the sequence, and a per-step 778-entry binary contact map. The 3D
contact-point conditioning input is encoded as a Gaussian heatmap on a
16x16x16 metric voxel grid whose bounds come from the training trajectories
and stay fixed afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .hand import HandMesh, HandPoseParams, HandShapeParams
from .rig import NUM_ARTIC_JOINTS, NUM_SHAPE_PARAMS, NUM_VERTICES

VOXEL_RES = 16
DEFAULT_SIGMA_VOXELS = 1.0


@dataclass
class ContactMap:
    mask: np.ndarray  # (778,) in {0,1}

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if self.mask.shape != (NUM_VERTICES,):
            raise ValueError(f"contact map must have {NUM_VERTICES} entries")
        if not np.isin(self.mask, (0, 1)).all():
            raise ValueError("contact map values must be 0 or 1")
        self.mask = self.mask.astype(np.uint8)


@dataclass
class InteractionTrajectory:
    """T timesteps of pose + contact, with fixed shape and labels."""

    beta: np.ndarray          # (10,)
    articulation: np.ndarray  # (T, 15, 6)
    rot6d: np.ndarray         # (T, 6) global rotation in the reference frame
    trans: np.ndarray         # (T, 3) global translation, meters
    contacts: np.ndarray      # (T, 778) uint8
    action_label: str
    object_label: str
    scene_label: str

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.articulation = np.asarray(self.articulation, dtype=np.float64)
        if self.articulation.ndim == 2 and self.articulation.shape[1] == 90:
            self.articulation = self.articulation.reshape(-1, NUM_ARTIC_JOINTS, 6)
        self.rot6d = np.asarray(self.rot6d, dtype=np.float64)
        self.trans = np.asarray(self.trans, dtype=np.float64)
        self.contacts = np.asarray(self.contacts).astype(np.uint8)
        t = self.horizon
        if t < 1:
            raise ValueError("horizon must be >= 1")
        if self.beta.shape != (NUM_SHAPE_PARAMS,):
            raise ValueError("beta must have 10 entries")
        if (self.articulation.shape != (t, NUM_ARTIC_JOINTS, 6)
                or self.rot6d.shape != (t, 6) or self.trans.shape != (t, 3)
                or self.contacts.shape != (t, NUM_VERTICES)):
            raise ValueError("per-step fields must share the horizon T")
        if not (self.action_label and self.object_label and self.scene_label):
            raise ValueError("labels must be non-empty")

    @property
    def horizon(self) -> int:
        return self.articulation.shape[0]

    def shape_params(self) -> HandShapeParams:
        return HandShapeParams(beta=self.beta)

    def pose_at(self, t: int) -> HandPoseParams:
        return HandPoseParams(articulation=self.articulation[t],
                              global_rot6d=self.rot6d[t],
                              global_trans=self.trans[t])

    def flat_steps(self) -> np.ndarray:
        """(T, 99) pose parameter matrix: articulation | rot6d | trans."""
        t = self.horizon
        return np.concatenate([self.articulation.reshape(t, -1),
                               self.rot6d, self.trans], axis=1)


@dataclass(frozen=True)
class GridBounds:
    min_xyz: np.ndarray
    max_xyz: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_xyz",
                           np.asarray(self.min_xyz, dtype=np.float64))
        object.__setattr__(self, "max_xyz",
                           np.asarray(self.max_xyz, dtype=np.float64))
        if self.min_xyz.shape != (3,) or self.max_xyz.shape != (3,):
            raise ValueError("bounds must be per-axis 3-vectors")
        if not np.all(self.max_xyz > self.min_xyz):
            raise ValueError("bounds must satisfy max > min on every axis")

    @property
    def pitch(self) -> np.ndarray:
        return (self.max_xyz - self.min_xyz) / VOXEL_RES


@dataclass
class VoxelHeatmap:
    values: np.ndarray  # (16, 16, 16) in [0, 1]
    bounds: GridBounds

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (VOXEL_RES,) * 3:
            raise ValueError(f"heatmap must be {VOXEL_RES}^3")


def contact_centroid(mesh: HandMesh, contact: ContactMap) -> Optional[np.ndarray]:
    """Mean position of contacted vertices; None when no vertex is in contact."""
    mask = contact.mask.astype(bool)
    if not mask.any():
        return None
    return mesh.vertices[mask].mean(axis=0)


def contact_centroids(vertices: np.ndarray, contacts: np.ndarray) -> np.ndarray:
    """Per-step centroids for (T,778,3) vertices and (T,778) masks.

    Steps with no contact get NaN centroids.
    """
    t = vertices.shape[0]
    out = np.full((t, 3), np.nan)
    for i in range(t):
        m = contacts[i].astype(bool)
        if m.any():
            out[i] = vertices[i][m].mean(axis=0)
    return out


def compute_grid_bounds(trajectories: Iterable[InteractionTrajectory]) -> GridBounds:
    """Per-axis min/max of wrist translations over all training sequences."""
    mins, maxs = [], []
    for traj in trajectories:
        mins.append(traj.trans.min(axis=0))
        maxs.append(traj.trans.max(axis=0))
    if not mins:
        raise ValueError("cannot compute grid bounds from an empty training set")
    lo = np.min(mins, axis=0)
    hi = np.max(maxs, axis=0)
    # guard degenerate axes (constant trajectories) with a tiny span
    flat = hi <= lo
    hi = np.where(flat, lo + 1e-6, hi)
    return GridBounds(min_xyz=lo, max_xyz=hi)


def coordinate_grid(bounds: GridBounds) -> np.ndarray:
    """(16,16,16,3) voxel-center positions in meters."""
    pitch = bounds.pitch
    axes = [bounds.min_xyz[a] + (np.arange(VOXEL_RES) + 0.5) * pitch[a]
            for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def voxelize_contact_point(point: np.ndarray, bounds: GridBounds,
                           sigma_voxels: float = DEFAULT_SIGMA_VOXELS) -> VoxelHeatmap:
    """Gaussian heatmap centered at a 3D point on the fixed metric grid.

    Sigma is given in voxel units and converted per axis through the voxel
    pitch. Out-of-bounds points clamp to the grid so test-time trajectories
    that exceed the training span still produce a boundary-peaked heatmap.
    """
    if sigma_voxels <= 0:
        raise ValueError("sigma_voxels must be positive")
    point = np.asarray(point, dtype=np.float64)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise ValueError("contact point must be a finite 3-vector")
    p = np.clip(point, bounds.min_xyz, bounds.max_xyz)
    centers = coordinate_grid(bounds)
    sigma_m = sigma_voxels * bounds.pitch
    d2 = (((centers - p) / sigma_m) ** 2).sum(axis=-1)
    return VoxelHeatmap(values=np.exp(-0.5 * d2), bounds=bounds)


def zero_heatmap(bounds: GridBounds) -> VoxelHeatmap:
    """All-zero heatmap, used for steps with no ground-truth contact."""
    return VoxelHeatmap(values=np.zeros((VOXEL_RES,) * 3), bounds=bounds)
