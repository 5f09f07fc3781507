"""6D rotation representation and rigid-transform math.

The 6D representation stores the first two columns of a rotation matrix;
Gram-Schmidt orthonormalization recovers the full matrix. Both numpy and
torch variants are provided: numpy for geometry/data tooling, torch for
differentiable model code. Torch variants are batched over leading dims.
"""

from __future__ import annotations

import numpy as np
import torch

IDENTITY_ROT6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

_PARALLEL_EPS = 1e-8


def rot6d_to_matrix(rot6d: np.ndarray) -> np.ndarray:
    """Gram-Schmidt two 3-vectors into a rotation matrix (columns)."""
    rot6d = np.asarray(rot6d, dtype=np.float64)
    if rot6d.shape != (6,):
        raise ValueError(f"expected 6 values, got shape {rot6d.shape}")
    a, b = rot6d[:3], rot6d[3:]
    na = np.linalg.norm(a)
    if na < _PARALLEL_EPS:
        raise ValueError("degenerate 6D rotation: first column near zero")
    c1 = a / na
    b_orth = b - np.dot(c1, b) * c1
    nb = np.linalg.norm(b_orth)
    if nb < _PARALLEL_EPS:
        raise ValueError("degenerate 6D rotation: columns are parallel")
    c2 = b_orth / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=1)


def matrix_to_rot6d(mat: np.ndarray) -> np.ndarray:
    """First two columns of a rotation matrix, flattened to 6 values."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (3, 3):
        raise ValueError(f"expected 3x3 matrix, got shape {mat.shape}")
    if not np.allclose(mat.T @ mat, np.eye(3), atol=1e-6):
        raise ValueError("input is not orthonormal")
    if np.linalg.det(mat) < 0:
        raise ValueError("input has negative determinant (reflection)")
    return np.concatenate([mat[:, 0], mat[:, 1]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rot6d_to_matrix_torch(rot6d: torch.Tensor) -> torch.Tensor:
    """Batched Gram-Schmidt: (..., 6) -> (..., 3, 3)."""
    if rot6d.shape[-1] != 6:
        raise ValueError(f"expected trailing dim 6, got {rot6d.shape}")
    a, b = rot6d[..., :3], rot6d[..., 3:]
    c1 = torch.nn.functional.normalize(a, dim=-1, eps=_PARALLEL_EPS)
    b_orth = b - (c1 * b).sum(-1, keepdim=True) * c1
    c2 = torch.nn.functional.normalize(b_orth, dim=-1, eps=_PARALLEL_EPS)
    c3 = torch.cross(c1, c2, dim=-1)
    return torch.stack([c1, c2, c3], dim=-1)


def matrix_to_rot6d_torch(mat: torch.Tensor) -> torch.Tensor:
    """(..., 3, 3) -> (..., 6): first two columns."""
    return torch.cat([mat[..., :, 0], mat[..., :, 1]], dim=-1)


def compose_rigid(r_a: np.ndarray, t_a: np.ndarray,
                  r_b: np.ndarray, t_b: np.ndarray):
    """Compose rigid transforms: (R_a, t_a) after (R_b, t_b)."""
    return r_a @ r_b, r_a @ t_b + t_a


def invert_rigid(r: np.ndarray, t: np.ndarray):
    return r.T, -r.T @ t
