"""Hand rig asset: template mesh, skinning weights, regressors, shape basis.

A rig bundles everything linear blend skinning needs: 778 template vertices,
a fixed triangle list, per-vertex skinning weights over 16 kinematic nodes
(wrist + 3 joints per finger), a 16-node regressor used to place rotation
centers, a 21-joint output regressor (wrist, MCP/PIP/DIP per finger, and
fingertips), and a 10-mode shape basis.

The bundled synthetic rig is generated procedurally from a capsule skeleton.
A MANO-compatible asset with the same array layout can be dropped in via the
versioned ``.npz`` rig file format (see ``save_rig``/``load_rig``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

NUM_VERTICES = 778
NUM_JOINTS = 21
NUM_KIN_NODES = 16
NUM_ARTIC_JOINTS = 15
NUM_SHAPE_PARAMS = 10

RIG_FORMAT_VERSION = 1

_RING_SIZE = 8

_FINGER_NAMES = ("thumb", "index", "middle", "ring", "pinky")

# MCP positions relative to the wrist (meters) and per-segment lengths.
_MCP_POS = {
    "thumb": (0.035, 0.025, 0.0),
    "index": (0.025, 0.090, 0.0),
    "middle": (0.008, 0.095, 0.0),
    "ring": (-0.010, 0.092, 0.0),
    "pinky": (-0.028, 0.085, 0.0),
}
_SEG_LEN = {
    "thumb": (0.035, 0.030, 0.025),
    "index": (0.040, 0.025, 0.020),
    "middle": (0.045, 0.028, 0.022),
    "ring": (0.042, 0.026, 0.020),
    "pinky": (0.033, 0.020, 0.017),
}


class RigError(Exception):
    """Raised when a rig asset is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class Rig:
    """Immutable rig asset; arrays are float64/int64 numpy."""

    template: np.ndarray        # (778, 3)
    faces: np.ndarray           # (F, 3) int
    weights: np.ndarray         # (778, 16), rows sum to 1
    kin_regressor: np.ndarray   # (16, 778), rows sum to 1
    joint_regressor: np.ndarray  # (21, 778), rows sum to 1
    parents: np.ndarray         # (16,), parents[0] == -1
    shape_basis: np.ndarray     # (10, 778, 3)

    def validate(self) -> None:
        if self.template.shape != (NUM_VERTICES, 3):
            raise RigError(f"template shape {self.template.shape}")
        if self.weights.shape != (NUM_VERTICES, NUM_KIN_NODES):
            raise RigError(f"weights shape {self.weights.shape}")
        if self.kin_regressor.shape != (NUM_KIN_NODES, NUM_VERTICES):
            raise RigError(f"kin_regressor shape {self.kin_regressor.shape}")
        if self.joint_regressor.shape != (NUM_JOINTS, NUM_VERTICES):
            raise RigError(f"joint_regressor shape {self.joint_regressor.shape}")
        if self.shape_basis.shape != (NUM_SHAPE_PARAMS, NUM_VERTICES, 3):
            raise RigError(f"shape_basis shape {self.shape_basis.shape}")
        if self.parents.shape != (NUM_KIN_NODES,) or self.parents[0] != -1:
            raise RigError("parents must be length 16 with root at index 0")
        if self.faces.min() < 0 or self.faces.max() >= NUM_VERTICES:
            raise RigError("face indices out of range")
        for arr in (self.template, self.weights, self.kin_regressor,
                    self.joint_regressor, self.shape_basis):
            if not np.all(np.isfinite(arr)):
                raise RigError("non-finite values in rig arrays")
        if not np.allclose(self.weights.sum(axis=1), 1.0, atol=1e-8):
            raise RigError("skinning weights must sum to 1 per vertex")


def _ring(center, direction, radius, n=_RING_SIZE):
    d = direction / np.linalg.norm(direction)
    # any vector not parallel to d
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(d, ref)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    ang = 2.0 * np.pi * np.arange(n) / n
    return center[None, :] + radius * (np.cos(ang)[:, None] * u[None, :]
                                       + np.sin(ang)[:, None] * v[None, :])


def _strip_faces(ring_starts, base):
    """Triangulate consecutive rings of a strip. ring_starts: vertex offsets."""
    faces = []
    for a, b in zip(ring_starts[:-1], ring_starts[1:]):
        for k in range(_RING_SIZE):
            k2 = (k + 1) % _RING_SIZE
            faces.append((base + a + k, base + a + k2, base + b + k))
            faces.append((base + b + k, base + a + k2, base + b + k2))
    return faces


def build_synthetic_rig(seed: int = 0) -> Rig:
    """Procedurally build the capsule-skeleton rig with MANO-like dimensions."""
    rng = np.random.default_rng(seed)

    wrist = np.zeros(3)
    mcp = {f: np.asarray(_MCP_POS[f]) for f in _FINGER_NAMES}
    # node layout: 0 wrist; 1+3f MCP, 2+3f PIP, 3+3f DIP
    parents = np.full(NUM_KIN_NODES, -1, dtype=np.int64)
    node_pos = np.zeros((NUM_KIN_NODES, 3))
    tips = {}
    for f_idx, f in enumerate(_FINGER_NAMES):
        d = mcp[f] - wrist
        d = d / np.linalg.norm(d)
        l1, l2, l3 = _SEG_LEN[f]
        n_mcp, n_pip, n_dip = 1 + 3 * f_idx, 2 + 3 * f_idx, 3 + 3 * f_idx
        node_pos[n_mcp] = mcp[f]
        node_pos[n_pip] = mcp[f] + l1 * d
        node_pos[n_dip] = mcp[f] + (l1 + l2) * d
        tips[f] = mcp[f] + (l1 + l2 + l3) * d
        parents[n_mcp], parents[n_pip], parents[n_dip] = 0, n_mcp, n_pip

    verts = []
    faces = []
    weights = np.zeros((NUM_VERTICES, NUM_KIN_NODES))
    kin_reg = np.zeros((NUM_KIN_NODES, NUM_VERTICES))
    joint_reg = np.zeros((NUM_JOINTS, NUM_VERTICES))

    def add_ring(center, direction, radius, node, parent_blend=None):
        base = len(verts)
        ring = _ring(np.asarray(center, dtype=float), direction, radius)
        verts.extend(ring)
        idx = np.arange(base, base + _RING_SIZE)
        if parent_blend is None:
            weights[idx, node] = 1.0
        else:
            pnode, frac = parent_blend
            weights[idx, node] = 1.0 - frac
            weights[idx, pnode] = frac
        return idx

    # palm rays: wrist -> MCP, 5 rings each, driven by the wrist node
    for f in _FINGER_NAMES:
        d = mcp[f] - wrist
        strip_start = len(verts)
        for frac in (0.15, 0.35, 0.55, 0.75, 0.95):
            add_ring(wrist + frac * d, d, 0.013, node=0)
        faces.extend(_strip_faces(list(range(0, 5 * _RING_SIZE, _RING_SIZE)),
                                  strip_start))

    # fingers: 10 rings (4 MCP seg, 3 PIP seg, 3 DIP seg) + 2 tip vertices
    finger_ring0 = {}
    for f_idx, f in enumerate(_FINGER_NAMES):
        d = (mcp[f] - wrist) / np.linalg.norm(mcp[f] - wrist)
        n_mcp, n_pip, n_dip = 1 + 3 * f_idx, 2 + 3 * f_idx, 3 + 3 * f_idx
        p_mcp, p_pip, p_dip = node_pos[n_mcp], node_pos[n_pip], node_pos[n_dip]
        tip = tips[f]
        radii = np.linspace(0.009, 0.006, 10)
        ring_specs = (
            [(p_mcp + fr * (p_pip - p_mcp), n_mcp, 0) for fr in (0.0, 0.25, 0.5, 0.75)]
            + [(p_pip + fr * (p_dip - p_pip), n_pip, 4) for fr in (0.0, 0.33, 0.66)]
            + [(p_dip + fr * (tip - p_dip), n_dip, 7) for fr in (0.0, 0.4, 0.8)]
        )
        strip_start = len(verts)
        for r_i, (center, node, seg_start) in enumerate(ring_specs):
            blend = None
            if r_i == seg_start:  # ring sits on the rotation center: split with parent
                blend = (int(parents[node]), 0.5)
            add_ring(center, d, radii[r_i], node=node, parent_blend=blend)
        faces.extend(_strip_faces(list(range(0, 10 * _RING_SIZE, _RING_SIZE)),
                                  strip_start))
        # two tip vertices, driven by the DIP node
        tip_idx = len(verts)
        verts.append(tip.copy())
        verts.append(tip + 0.002 * d)
        weights[tip_idx, n_dip] = 1.0
        weights[tip_idx + 1, n_dip] = 1.0
        last_ring = strip_start + 9 * _RING_SIZE
        for k in range(_RING_SIZE):
            faces.append((last_ring + k, last_ring + (k + 1) % _RING_SIZE, tip_idx))
        finger_ring0[f] = strip_start

        # regressors: rings centered exactly on joints, tip vertex on the tip
        kin_reg[n_mcp, strip_start:strip_start + _RING_SIZE] = 1.0 / _RING_SIZE
        kin_reg[n_pip, strip_start + 4 * _RING_SIZE:
                strip_start + 5 * _RING_SIZE] = 1.0 / _RING_SIZE
        kin_reg[n_dip, strip_start + 7 * _RING_SIZE:
                strip_start + 8 * _RING_SIZE] = 1.0 / _RING_SIZE
        jbase = 1 + 4 * f_idx  # 21-joint order: wrist, then MCP/PIP/DIP/TIP per finger
        joint_reg[jbase] = kin_reg[n_mcp]
        joint_reg[jbase + 1] = kin_reg[n_pip]
        joint_reg[jbase + 2] = kin_reg[n_dip]
        joint_reg[jbase + 3, tip_idx] = 1.0

    # wrist capsule: 21 rings along +y, ring 7 centered at the wrist joint
    wrist_start = len(verts)
    ys = -0.028 + 0.004 * np.arange(21)
    for y in ys:
        add_ring(np.array([0.0, y, 0.0]), np.array([0.0, 1.0, 0.0]), 0.020, node=0)
    faces.extend(_strip_faces(list(range(0, 21 * _RING_SIZE, _RING_SIZE)),
                              wrist_start))
    wrist_ring = wrist_start + 7 * _RING_SIZE
    kin_reg[0, wrist_ring:wrist_ring + _RING_SIZE] = 1.0 / _RING_SIZE
    joint_reg[0] = kin_reg[0]

    template = np.asarray(verts)
    if template.shape[0] != NUM_VERTICES:
        raise RigError(f"vertex budget mismatch: built {template.shape[0]}")

    # shape basis: mode 0 is uniform scale, the rest are smooth random fields
    basis = np.zeros((NUM_SHAPE_PARAMS, NUM_VERTICES, 3))
    basis[0] = 0.01 * template
    for d_i in range(1, NUM_SHAPE_PARAMS):
        k = rng.normal(size=3) * 20.0
        phase = rng.uniform(0, 2 * np.pi)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        basis[d_i] = 0.002 * np.sin(template @ k + phase)[:, None] * direction[None, :]

    rig = Rig(
        template=template,
        faces=np.asarray(faces, dtype=np.int64),
        weights=weights,
        kin_regressor=kin_reg,
        joint_regressor=joint_reg,
        parents=parents,
        shape_basis=basis,
    )
    rig.validate()
    return rig


def save_rig(rig: Rig, path) -> None:
    rig.validate()
    np.savez(
        path,
        format_version=np.int64(RIG_FORMAT_VERSION),
        template=rig.template,
        faces=rig.faces,
        weights=rig.weights,
        kin_regressor=rig.kin_regressor,
        joint_regressor=rig.joint_regressor,
        parents=rig.parents,
        shape_basis=rig.shape_basis,
    )


def load_rig(path) -> Rig:
    path = Path(path)
    if not path.exists():
        raise RigError(f"rig asset not found: {path}")
    try:
        data = np.load(path)
    except Exception as exc:
        raise RigError(f"corrupt rig asset {path}: {exc}") from exc
    required = {"format_version", "template", "faces", "weights",
                "kin_regressor", "joint_regressor", "parents", "shape_basis"}
    missing = required - set(data.files)
    if missing:
        raise RigError(f"rig asset missing arrays: {sorted(missing)}")
    version = int(data["format_version"])
    if version != RIG_FORMAT_VERSION:
        raise RigError(f"unsupported rig format version {version}")
    rig = Rig(
        template=data["template"],
        faces=data["faces"],
        weights=data["weights"],
        kin_regressor=data["kin_regressor"],
        joint_regressor=data["joint_regressor"],
        parents=data["parents"],
        shape_basis=data["shape_basis"],
    )
    rig.validate()
    return rig


def vertex_groups() -> dict:
    """Named index groups of the synthetic rig's vertex layout.

    Layout (by construction order): 5 palm strips of 40, then per finger
    80 ring vertices + 2 tip vertices, then 168 wrist vertices.
    """
    groups = {"palm": np.arange(0, 200), "wrist": np.arange(610, 778)}
    tips = []
    for f_idx, f in enumerate(_FINGER_NAMES):
        base = 200 + f_idx * 82
        groups[f] = np.arange(base, base + 82)
        # distal ring + the two tip vertices
        tips.append(np.concatenate([np.arange(base + 72, base + 80),
                                    [base + 80, base + 81]]))
        groups[f"{f}_tip"] = tips[-1]
    groups["fingertips"] = np.concatenate(tips)
    groups["grip"] = np.concatenate([groups["thumb_tip"], groups["index_tip"],
                                     groups["middle_tip"]])
    return groups


_DEFAULT_RIG: Rig | None = None


def default_rig() -> Rig:
    """The bundled synthetic rig, built once per process."""
    global _DEFAULT_RIG
    if _DEFAULT_RIG is None:
        _DEFAULT_RIG = build_synthetic_rig(seed=0)
    return _DEFAULT_RIG
