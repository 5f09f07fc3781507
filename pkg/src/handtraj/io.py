"""Versioned binary container for trajectory sets, plus checkpoint helpers.

Container layout (little-endian):

    bytes 0..3    magic ``HTRJ``
    bytes 4..7    format version (uint32)
    bytes 8..39   SHA-256 of everything that follows
    bytes 40..47  header length in bytes (uint64)
    header        UTF-8 JSON: {"num_records": N, "records": [{"T", "action",
                  "object", "scene"}, ...]}
    payload       per record, concatenated fixed-width arrays:
                  beta float64[10], articulation float64[T*90],
                  rot6d float64[T*6], trans float64[T*3], contacts uint8[T*778]

Checkpoints for trained models are torch archives with a ``format_version``
key; ``save_checkpoint``/``load_checkpoint`` enforce the version and kind.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np
import torch

from .rig import NUM_VERTICES
from .trajectory import GridBounds, InteractionTrajectory

MAGIC = b"HTRJ"
CONTAINER_VERSION = 1
CHECKPOINT_VERSION = 1


class ContainerError(Exception):
    """Raised on container version, truncation, or checksum failures."""


def save_trajectories(path, trajectories: Sequence[InteractionTrajectory]) -> None:
    records = []
    payload = bytearray()
    for traj in trajectories:
        records.append({"T": traj.horizon, "action": traj.action_label,
                        "object": traj.object_label, "scene": traj.scene_label})
        payload += traj.beta.astype("<f8").tobytes()
        payload += traj.articulation.astype("<f8").tobytes()
        payload += traj.rot6d.astype("<f8").tobytes()
        payload += traj.trans.astype("<f8").tobytes()
        payload += traj.contacts.astype(np.uint8).tobytes()
    header = json.dumps({"num_records": len(records), "records": records},
                        separators=(",", ":")).encode("utf-8")
    body = struct.pack("<Q", len(header)) + header + bytes(payload)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CONTAINER_VERSION))
        fh.write(digest)
        fh.write(body)


def load_trajectories(path) -> List[InteractionTrajectory]:
    raw = Path(path).read_bytes()
    if len(raw) < 48 or raw[:4] != MAGIC:
        raise ContainerError(f"not a trajectory container: {path}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != CONTAINER_VERSION:
        raise ContainerError(f"unsupported container version {version}")
    digest, body = raw[8:40], raw[40:]
    if hashlib.sha256(body).digest() != digest:
        raise ContainerError("checksum mismatch: container is corrupted")
    header_len = struct.unpack("<Q", body[:8])[0]
    if len(body) < 8 + header_len:
        raise ContainerError("truncated container header")
    header = json.loads(body[8:8 + header_len].decode("utf-8"))
    payload = body[8 + header_len:]

    out = []
    offset = 0
    for rec in header["records"]:
        t = int(rec["T"])
        need = 8 * (10 + t * 90 + t * 6 + t * 3) + t * NUM_VERTICES
        if offset + need > len(payload):
            raise ContainerError("truncated container payload")
        def take(count, dtype):
            nonlocal offset
            width = np.dtype(dtype).itemsize * count
            arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset)
            offset += width
            return arr
        beta = take(10, "<f8")
        artic = take(t * 90, "<f8").reshape(t, 15, 6)
        rot6d = take(t * 6, "<f8").reshape(t, 6)
        trans = take(t * 3, "<f8").reshape(t, 3)
        contacts = take(t * NUM_VERTICES, np.uint8).reshape(t, NUM_VERTICES)
        out.append(InteractionTrajectory(
            beta=beta.copy(), articulation=artic.copy(), rot6d=rot6d.copy(),
            trans=trans.copy(), contacts=contacts.copy(),
            action_label=rec["action"], object_label=rec["object"],
            scene_label=rec["scene"]))
    if offset != len(payload):
        raise ContainerError("trailing bytes after last record")
    return out


def save_checkpoint(path, kind: str, config: dict, state_dict: dict,
                    bounds: GridBounds | None = None, extra: dict | None = None) -> None:
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "state_dict": state_dict,
        "bounds": None if bounds is None else {
            "min_xyz": bounds.min_xyz.tolist(),
            "max_xyz": bounds.max_xyz.tolist()},
        "extra": extra or {},
    }
    torch.save(blob, path)


def load_checkpoint(path, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ContainerError(
            f"missing checkpoint {path}; run the corresponding train command first")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise ContainerError(f"unsupported checkpoint version in {path}")
    if blob.get("kind") != kind:
        raise ContainerError(f"expected {kind} checkpoint, found {blob.get('kind')}")
    if blob["bounds"] is not None:
        blob["bounds"] = GridBounds(min_xyz=np.array(blob["bounds"]["min_xyz"]),
                                    max_xyz=np.array(blob["bounds"]["max_xyz"]))
    return blob


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
