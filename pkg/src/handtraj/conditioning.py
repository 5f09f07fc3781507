"""Conditioning features: text/image providers and the contact-voxel encoder.

The default providers are synthetic, deterministic stand-ins for pretrained
encoders so the package needs no model-weight downloads: text maps to a
hash-seeded unit vector, images to a smooth function of the scene's
generative parameters. Real encoders can be plugged in through the
file-backed adapters (``FileTextProvider``/``FileImageProvider``), which read
fixed-width vectors exported by any external model.

``ContactVoxelEncoder`` is the learned module shared by the codebook decoder,
indexer, and predictor: four 3D convolutions over the 16^3 heatmap plus a
parallel stack over the heatmap-augmented coordinate grid, fused to 32 dims.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .trajectory import VOXEL_RES, GridBounds, VoxelHeatmap, coordinate_grid

TEXT_DIM = 512
IMAGE_DIM = 768
CONTACT_FEAT_DIM = 32

# last IMAGE_HAND_DIMS components of an image embedding carry hand-dependent
# content; the no-hand variant zeroes exactly these
IMAGE_HAND_DIMS = 64


def _string_rng(seed: int, *parts: str) -> np.random.Generator:
    h = hashlib.sha256(("\x1f".join(parts) + f"|{seed}").encode("utf-8"))
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


@dataclass(frozen=True)
class SceneDescriptor:
    """Generative parameters of a synthetic scene, one per sequence."""

    object_label: str
    scene_label: str
    object_position: tuple   # (3,) meters
    object_yaw: float
    wrist_path: tuple        # (T, 3) meters, drives the hand-dependent part

    def wrist_array(self) -> np.ndarray:
        return np.asarray(self.wrist_path, dtype=np.float64)

    @property
    def horizon(self) -> int:
        return len(self.wrist_path)

    def to_dict(self) -> dict:
        return {"object_label": self.object_label, "scene_label": self.scene_label,
                "object_position": list(self.object_position),
                "object_yaw": self.object_yaw,
                "wrist_path": [list(p) for p in self.wrist_path]}

    @staticmethod
    def from_dict(d: dict) -> "SceneDescriptor":
        return SceneDescriptor(
            object_label=d["object_label"], scene_label=d["scene_label"],
            object_position=tuple(d["object_position"]),
            object_yaw=float(d["object_yaw"]),
            wrist_path=tuple(tuple(p) for p in d["wrist_path"]))


class SyntheticTextProvider:
    """Unit-norm pseudo-random embedding seeded by a hash of the string."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def embed(self, action_text: str) -> np.ndarray:
        if not action_text:
            raise ValueError("action text must be non-empty")
        vec = _string_rng(self.seed, "text", action_text).standard_normal(TEXT_DIM)
        return vec / np.linalg.norm(vec)


class SyntheticImageProvider:
    """Smooth deterministic embedding of a synthetic scene descriptor.

    The first 704 components depend on the object and scene only; the last
    ``IMAGE_HAND_DIMS`` encode the hand state and are zeroed when the hand is
    not visible (the in-painted variant).
    """

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed + 7919)
        base_in = 16 + 8 + 3 + 2  # object vec | scene vec | position | yaw
        self._w_base = rng.standard_normal((IMAGE_DIM - IMAGE_HAND_DIMS, base_in)) * 0.5
        self._b_base = rng.standard_normal(IMAGE_DIM - IMAGE_HAND_DIMS) * 0.1
        self._w_hand = rng.standard_normal((IMAGE_HAND_DIMS, 3)) * 2.0
        self.seed = seed

    def _label_vec(self, kind: str, label: str, dim: int) -> np.ndarray:
        return _string_rng(self.seed, kind, label).standard_normal(dim)

    def embed(self, scene: SceneDescriptor, frame: int,
              hand_visible: bool = True) -> np.ndarray:
        wrist = scene.wrist_array()
        if not 0 <= frame < len(wrist):
            raise ValueError(f"frame {frame} outside horizon {len(wrist)}")
        phi = np.concatenate([
            self._label_vec("object", scene.object_label, 16),
            self._label_vec("scene", scene.scene_label, 8),
            np.asarray(scene.object_position, dtype=np.float64),
            [np.sin(scene.object_yaw), np.cos(scene.object_yaw)],
        ])
        base = np.tanh(self._w_base @ phi + self._b_base)
        if hand_visible:
            hand = np.tanh(self._w_hand @ wrist[frame])
        else:
            hand = np.zeros(IMAGE_HAND_DIMS)
        return np.concatenate([base, hand])

    def embed_video(self, scene: SceneDescriptor,
                    hand_visible: bool = True) -> np.ndarray:
        return np.stack([self.embed(scene, t, hand_visible)
                         for t in range(scene.horizon)])


class FileTextProvider:
    """Adapter reading precomputed text vectors from ``<dir>/<sha1(text)>.npy``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def embed(self, action_text: str) -> np.ndarray:
        if not action_text:
            raise ValueError("action text must be non-empty")
        name = hashlib.sha1(action_text.encode("utf-8")).hexdigest()
        path = self.directory / f"{name}.npy"
        vec = np.load(path)
        if vec.shape != (TEXT_DIM,):
            raise ValueError(f"expected ({TEXT_DIM},) vector in {path}")
        return vec.astype(np.float64)


class FileImageProvider:
    """Adapter reading per-frame image vectors from ``<dir>/<key>_<frame>.npy``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def embed(self, key: str, frame: int) -> np.ndarray:
        path = self.directory / f"{key}_{frame:04d}.npy"
        vec = np.load(path)
        if vec.shape != (IMAGE_DIM,):
            raise ValueError(f"expected ({IMAGE_DIM},) vector in {path}")
        return vec.astype(np.float64)


def _conv_stack(in_channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv3d(in_channels, 8, kernel_size=3, stride=1, padding=1), nn.ReLU(),
        nn.Conv3d(8, 16, kernel_size=3, stride=2, padding=1), nn.ReLU(),
        nn.Conv3d(16, 32, kernel_size=3, stride=2, padding=1), nn.ReLU(),
        nn.Conv3d(32, 32, kernel_size=3, stride=1, padding=1), nn.ReLU(),
    )


class ContactVoxelEncoder(nn.Module):
    """Four 3D conv layers over the heatmap, a parallel stack over the
    4-channel coordinate grid (xyz centers + heatmap), fused to 32 dims."""

    def __init__(self):
        super().__init__()
        self.heat_stack = _conv_stack(1)
        self.coord_stack = _conv_stack(4)
        self.fuse = nn.Linear(64, CONTACT_FEAT_DIM)

    def forward(self, heatmap: torch.Tensor, coord_grid: torch.Tensor) -> torch.Tensor:
        """heatmap (B,16,16,16), coord_grid (B,3,16,16,16) -> (B,32)."""
        if heatmap.shape[-3:] != (VOXEL_RES,) * 3:
            raise ValueError(f"heatmap must be {VOXEL_RES}^3, got {heatmap.shape}")
        if coord_grid.shape[-4:] != (3, VOXEL_RES, VOXEL_RES, VOXEL_RES):
            raise ValueError(f"coordinate grid shape {coord_grid.shape}")
        h = heatmap.unsqueeze(1)
        a = self.heat_stack(h).mean(dim=(-3, -2, -1))
        b = self.coord_stack(torch.cat([coord_grid, h], dim=1)).mean(dim=(-3, -2, -1))
        return self.fuse(torch.cat([a, b], dim=-1))


def coord_grid_tensor(bounds: GridBounds, dtype=torch.float32) -> torch.Tensor:
    """(3,16,16,16) channel-first voxel-center grid for the encoder."""
    grid = coordinate_grid(bounds)  # (16,16,16,3)
    return torch.as_tensor(np.moveaxis(grid, -1, 0), dtype=dtype)


def heatmap_tensor(heatmap: VoxelHeatmap, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(heatmap.values, dtype=dtype)
