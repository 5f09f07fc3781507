"""ASCII PLY export of per-timestep hand meshes with contact coloring.

Each timestep produces one mesh per view: the camera (reference-frame) view
and an alternate view rotated about the vertical axis. Contacted vertices are
red, the rest gray. The timestep-0 contact point is exported as a small
octahedron marker.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .hand import forward_kinematics
from .rig import Rig, default_rig
from .trajectory import ContactMap, InteractionTrajectory, contact_centroid

CONTACT_COLOR = (220, 40, 40)
BASE_COLOR = (180, 180, 180)
ALT_VIEW_DEG = 90.0


def write_ply(path, vertices: np.ndarray, faces: np.ndarray,
              colors: np.ndarray) -> None:
    """ASCII PLY with per-vertex uchar RGB colors."""
    vertices = np.asarray(vertices, dtype=np.float64)
    colors = np.asarray(colors, dtype=np.int64)
    if vertices.shape[0] != colors.shape[0]:
        raise ValueError("one color per vertex required")
    lines = ["ply", "format ascii 1.0",
             f"element vertex {len(vertices)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             f"element face {len(faces)}",
             "property list uchar int vertex_indices", "end_header"]
    for v, c in zip(vertices, colors):
        lines.append(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f} {c[0]} {c[1]} {c[2]}")
    for f in faces:
        lines.append(f"3 {f[0]} {f[1]} {f[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


def contact_colors(contact_mask: np.ndarray) -> np.ndarray:
    colors = np.tile(np.array(BASE_COLOR), (len(contact_mask), 1))
    colors[np.asarray(contact_mask) > 0] = CONTACT_COLOR
    return colors


def _yaw_matrix(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    return np.array([[np.cos(a), 0.0, np.sin(a)],
                     [0.0, 1.0, 0.0],
                     [-np.sin(a), 0.0, np.cos(a)]])


def _marker_mesh(center: np.ndarray, radius: float = 0.005):
    """Octahedron marker around a 3D point."""
    offsets = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                        [0, -1, 0], [0, 0, 1], [0, 0, -1]]) * radius
    verts = center[None, :] + offsets
    faces = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                      [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return verts, faces


def export_trajectory(out_dir, traj: InteractionTrajectory,
                      rig: Rig | None = None,
                      alt_view_deg: float = ALT_VIEW_DEG) -> list:
    """Write per-timestep PLY meshes for two views; returns written paths."""
    rig = rig if rig is not None else default_rig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    alt = _yaw_matrix(alt_view_deg)
    written = []
    shape = traj.shape_params()
    frame0_mesh = None
    for t in range(traj.horizon):
        mesh, _ = forward_kinematics(shape, traj.pose_at(t), rig)
        if t == 0:
            frame0_mesh = mesh
        colors = contact_colors(traj.contacts[t])
        for view, v in (("cam", mesh.vertices), ("alt", mesh.vertices @ alt.T)):
            path = out_dir / f"frame_{t:03d}_{view}.ply"
            write_ply(path, v, rig.faces, colors)
            written.append(path)
    point = contact_centroid(frame0_mesh, ContactMap(mask=traj.contacts[0]))
    if point is not None:
        mverts, mfaces = _marker_mesh(point)
        mcolors = np.tile(np.array([40, 90, 220]), (len(mverts), 1))
        path = out_dir / "contact_point.ply"
        write_ply(path, mverts, mfaces, mcolors)
        written.append(path)
    return written
