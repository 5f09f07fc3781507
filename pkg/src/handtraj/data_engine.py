"""Geometry pipeline from per-frame meshes/masks/cameras to trajectories.

Software rasterization of the hand mesh gives the hand mask and a z-buffer;
the 2D contact region is the hand/object mask intersection with stochastic
boundary dilation; back-projection marks mesh vertices whose projections
land in the region and pass a z-buffer visibility test; reference-frame
transforms express every frame in the camera frame of timestep 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .rig import NUM_VERTICES
from .rotations import compose_rigid, invert_rigid
from .trajectory import ContactMap

VISIBILITY_EPS_M = 0.005  # depth tolerance for back-projection visibility
DEFAULT_BOUNDARY_SIGMA_PX = 2.0


@dataclass(frozen=True)
class CameraParams:
    """Pinhole intrinsics plus per-frame camera-from-world extrinsics."""

    intrinsics: np.ndarray           # (3, 3) pixels
    rotations: np.ndarray            # (N, 3, 3) camera-from-world
    translations: np.ndarray         # (N, 3) meters

    def __post_init__(self):
        object.__setattr__(self, "intrinsics",
                           np.asarray(self.intrinsics, dtype=np.float64))
        object.__setattr__(self, "rotations",
                           np.asarray(self.rotations, dtype=np.float64))
        object.__setattr__(self, "translations",
                           np.asarray(self.translations, dtype=np.float64))
        if self.intrinsics.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if self.intrinsics[0, 0] <= 0 or self.intrinsics[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        for r in np.atleast_3d(self.rotations).reshape(-1, 3, 3):
            if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
                raise ValueError("extrinsic rotations must be orthonormal")


def project(points: np.ndarray, intrinsics: np.ndarray) -> np.ndarray:
    """Camera-frame points (N,3) -> pixel coordinates (N,2)."""
    z = points[:, 2]
    u = intrinsics[0, 0] * points[:, 0] / z + intrinsics[0, 2]
    v = intrinsics[1, 1] * points[:, 1] / z + intrinsics[1, 2]
    return np.stack([u, v], axis=1)


def rasterize(vertices: np.ndarray, faces: np.ndarray, intrinsics: np.ndarray,
              height: int, width: int):
    """Z-buffered triangle rasterization.

    Returns (mask (H,W) uint8, zbuf (H,W) float with +inf where empty).
    Vertices must be in the camera frame with z > 0; triangles are treated
    as double-sided (the synthetic capsule strips are open surfaces).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if len(vertices) and vertices[:, 2].min() <= 0:
        raise ValueError("all vertices must be in front of the camera (z > 0)")
    mask = np.zeros((height, width), dtype=np.uint8)
    zbuf = np.full((height, width), np.inf)
    if len(vertices) == 0 or len(faces) == 0:
        return mask, zbuf
    px = project(vertices, intrinsics)
    z = vertices[:, 2]
    for f in faces:
        p0, p1, p2 = px[f[0]], px[f[1]], px[f[2]]
        z0, z1, z2 = z[f[0]], z[f[1]], z[f[2]]
        xmin = max(int(np.floor(min(p0[0], p1[0], p2[0]))), 0)
        xmax = min(int(np.ceil(max(p0[0], p1[0], p2[0]))), width - 1)
        ymin = max(int(np.floor(min(p0[1], p1[1], p2[1]))), 0)
        ymax = min(int(np.ceil(max(p0[1], p1[1], p2[1]))), height - 1)
        if xmin > xmax or ymin > ymax:
            continue
        area = ((p1[0] - p0[0]) * (p2[1] - p0[1])
                - (p2[0] - p0[0]) * (p1[1] - p0[1]))
        if abs(area) < 1e-12:
            continue
        xs = np.arange(xmin, xmax + 1) + 0.5
        ys = np.arange(ymin, ymax + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((p1[0] - gx) * (p2[1] - gy) - (p2[0] - gx) * (p1[1] - gy)) / area
        w1 = ((p2[0] - gx) * (p0[1] - gy) - (p0[0] - gx) * (p2[1] - gy)) / area
        w2 = 1.0 - w0 - w1
        # edge-inclusive with a tolerance so boundary pixels are not lost
        # to round-off in the barycentric division
        eps = 1e-9
        inside = (w0 >= -eps) & (w1 >= -eps) & (w2 >= -eps)
        if not inside.any():
            continue
        depth = w0 * z0 + w1 * z1 + w2 * z2
        sub_z = zbuf[ymin:ymax + 1, xmin:xmax + 1]
        sub_m = mask[ymin:ymax + 1, xmin:xmax + 1]
        closer = inside & (depth < sub_z)
        sub_z[closer] = depth[closer]
        sub_m[inside] = 1
    return mask, zbuf


def render_hand_mask(vertices: np.ndarray, faces: np.ndarray,
                     cam: CameraParams, height: int, width: int) -> np.ndarray:
    mask, _ = rasterize(vertices, faces, cam.intrinsics, height, width)
    return mask


def contact_region_2d(hand_mask: np.ndarray, object_mask: np.ndarray,
                      boundary_sigma: float = DEFAULT_BOUNDARY_SIGMA_PX,
                      seed: int = 0) -> np.ndarray:
    """Mask intersection densified by stochastic boundary dilation.

    Boundary pixels of the raw intersection are expanded by a radius drawn
    as |N(0, boundary_sigma)| pixels; the output always contains the raw
    intersection.
    """
    hand_mask = np.asarray(hand_mask)
    object_mask = np.asarray(object_mask)
    if hand_mask.shape != object_mask.shape:
        raise ValueError("hand and object masks must share dimensions")
    inter = (hand_mask > 0) & (object_mask > 0)
    region = inter.copy()
    if not inter.any():
        return region.astype(np.uint8)
    boundary = inter & ~ndimage.binary_erosion(inter)
    rng = np.random.default_rng(seed)
    h, w = inter.shape
    for y, x in np.argwhere(boundary):
        radius = abs(rng.normal(0.0, boundary_sigma))
        r = int(np.ceil(radius))
        if r == 0:
            continue
        y0, y1 = max(y - r, 0), min(y + r + 1, h)
        x0, x1 = max(x - r, 0), min(x + r + 1, w)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        region[y0:y1, x0:x1] |= ((yy - y) ** 2 + (xx - x) ** 2) <= radius ** 2
    return region.astype(np.uint8)


def backproject_contact(region: np.ndarray, vertices: np.ndarray,
                        faces: np.ndarray, cam: CameraParams,
                        depth_eps: float = VISIBILITY_EPS_M) -> ContactMap:
    """Mark vertices whose pixel lies in the region and which are visible.

    Visibility: the vertex depth is within ``depth_eps`` of the mesh z-buffer
    at its pixel, so self-occluded vertices are never marked.
    """
    region = np.asarray(region)
    height, width = region.shape
    _, zbuf = rasterize(vertices, faces, cam.intrinsics, height, width)
    px = project(vertices, cam.intrinsics)
    cols = np.round(px[:, 0] - 0.5).astype(int)
    rows = np.round(px[:, 1] - 0.5).astype(int)
    mask = np.zeros(NUM_VERTICES, dtype=np.uint8)
    in_img = (cols >= 0) & (cols < width) & (rows >= 0) & (rows < height)
    for v in np.nonzero(in_img)[0]:
        r, c = rows[v], cols[v]
        if region[r, c] and vertices[v, 2] <= zbuf[r, c] + depth_eps:
            mask[v] = 1
    return ContactMap(mask=mask)


def reference_frame_transforms(cam: CameraParams):
    """Per-frame rigid transforms mapping frame-t camera coords to frame 0.

    M_t = E_0 compose E_t^{-1} where E_t is camera-from-world; frame 0 maps
    to itself.
    """
    r0, t0 = cam.rotations[0], cam.translations[0]
    out = []
    for rt, tt in zip(cam.rotations, cam.translations):
        ri, ti = invert_rigid(rt, tt)
        out.append(compose_rigid(r0, t0, ri, ti))
    return out


def to_reference_frame(meshes: Sequence[np.ndarray], cam: CameraParams):
    """Transform per-frame camera-frame vertex arrays into the reference frame.

    Returns (transformed vertex arrays, list of (R, t) transforms).
    """
    transforms = reference_frame_transforms(cam)
    if len(meshes) != len(transforms):
        raise ValueError("one mesh per extrinsic frame required")
    moved = [verts @ r.T + t for verts, (r, t) in zip(meshes, transforms)]
    return moved, transforms
