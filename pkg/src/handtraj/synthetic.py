"""Procedural interaction-trajectory generator and generalization splits.

Each sequence instantiates an action template (smooth sinusoid/ramp motion
primitives with bounded velocity, a finger-curl schedule, and a time-varying
contact-region selector) for a sampled (action, object, scene) triple with
jittered parameters. Scene descriptors carry the generative parameters the
synthetic image provider embeds, including the hand-visibility variant.

Splits hold out whole categories: object/action/task (= action-object pair)
modes pick a held-out category set for the test split via subset-sum over
category sizes, so the 80:10:10 sequence ratio is met as closely as the
category granularity allows; scene mode holds the minority scene out of
training entirely.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .conditioning import SceneDescriptor
from .rig import NUM_ARTIC_JOINTS, vertex_groups
from .rotations import matrix_to_rot6d
from .trajectory import InteractionTrajectory

ACTION_NAMES = (
    "grab", "open", "screw", "mix", "rotate", "align", "slide",
    "close", "pull", "push", "lift", "place", "pour", "twist",
    "press", "wipe", "shake", "insert", "remove", "flip", "hold",
    "turn", "scoop", "cut",
)

OBJECT_NAMES = tuple(f"object_{i:02d}" for i in range(120))

SPLIT_MODES = ("task", "object", "action", "scene")

_CONTACT_GROUPS = ("fingertips", "grip", "palm", "thumb_tip", "index_tip",
                   "middle_tip")
# actions whose contact region drifts over time (e.g. twisting)
_ROLLING_CONTACT = {"screw", "twist", "rotate", "turn", "mix", "wipe"}


def _hash_rng(*parts) -> np.random.Generator:
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode())
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "little"))


@dataclass
class GeneratorConfig:
    num_sequences: int = 500
    horizon: int = 30
    num_actions: int = 24
    num_objects: int = 10
    scenes: Tuple[str, str] = ("studio", "workshop")
    scene_weights: Tuple[float, float] = (0.8, 0.2)
    seed: int = 0

    def __post_init__(self):
        if self.num_actions < 2 or self.num_objects < 2:
            raise ValueError("need at least 2 actions and 2 objects for splits")
        if not 1 <= self.num_actions <= len(ACTION_NAMES):
            raise ValueError(f"num_actions must be <= {len(ACTION_NAMES)}")
        if self.num_objects > len(OBJECT_NAMES):
            raise ValueError(f"num_objects must be <= {len(OBJECT_NAMES)}")
        if len(self.scenes) != 2:
            raise ValueError("exactly two scene labels are required")
        if self.num_sequences < 1 or self.horizon < 1:
            raise ValueError("invalid counts")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["scenes"] = list(self.scenes)
        d["scene_weights"] = list(self.scene_weights)
        return d


@dataclass
class SyntheticDataset:
    trajectories: List[InteractionTrajectory]
    descriptors: List[SceneDescriptor]
    config: GeneratorConfig

    def __len__(self) -> int:
        return len(self.trajectories)


def _action_template(action: str) -> dict:
    """Deterministic motion-primitive parameters for one action category."""
    rng = _hash_rng("action-template", action)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    wobble = rng.normal(size=3)
    wobble -= wobble.dot(direction) * direction
    wobble /= np.linalg.norm(wobble)
    return {
        "direction": direction,
        "wobble": wobble,
        "amplitude": rng.uniform(0.08, 0.20),
        "wobble_amp": rng.uniform(0.01, 0.04),
        "freq": rng.uniform(0.5, 2.0),
        "roll_amp": rng.uniform(0.6, 1.6) if action in _ROLLING_CONTACT
                    else rng.uniform(0.0, 0.3),
        "curl_base": rng.uniform(0.1, 0.5),
        "curl_amp": rng.uniform(0.2, 0.6),
        "contact_group": _CONTACT_GROUPS[int(rng.integers(len(_CONTACT_GROUPS)))],
    }


def _object_params(obj: str) -> dict:
    rng = _hash_rng("object-params", obj)
    return {
        "size": rng.uniform(0.5, 1.5),
        "offset": rng.uniform(-0.08, 0.08, size=3),
        "yaw": rng.uniform(0, 2 * np.pi),
    }


def _scene_offset(scene: str) -> np.ndarray:
    rng = _hash_rng("scene-offset", scene)
    return rng.uniform(-0.05, 0.05, size=3)


def _curl_rot6d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    return matrix_to_rot6d(rot)


def _generate_sequence(idx: int, action: str, obj: str, scene: str,
                       horizon: int, seed: int):
    rng = _hash_rng("sequence", seed, idx)
    tpl = _action_template(action)
    obj_p = _object_params(obj)
    tau = np.linspace(0.0, 1.0, horizon)

    start = (np.array([0.0, 0.0, 0.45]) + _scene_offset(scene) + obj_p["offset"]
             + rng.normal(0, 0.01, size=3))
    amp = tpl["amplitude"] * obj_p["size"] * rng.uniform(0.9, 1.1)
    wob = tpl["wobble_amp"] * obj_p["size"] * rng.uniform(0.9, 1.1)
    freq = tpl["freq"] * rng.uniform(0.95, 1.05)
    phase = rng.uniform(0, 0.2)
    ramp = 0.5 - 0.5 * np.cos(np.pi * tau)
    trans = (start[None, :]
             + amp * ramp[:, None] * tpl["direction"][None, :]
             + wob * np.sin(2 * np.pi * freq * tau + phase)[:, None]
             * tpl["wobble"][None, :])

    base_yaw = obj_p["yaw"] + rng.normal(0, 0.05)
    cz, sz = np.cos(base_yaw), np.sin(base_yaw)
    base_rot = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1.0]])
    rot6d = np.zeros((horizon, 6))
    artic = np.zeros((horizon, NUM_ARTIC_JOINTS, 6))
    roll = tpl["roll_amp"] * np.sin(2 * np.pi * freq * tau + phase)
    for t in range(horizon):
        cr, sr = np.cos(roll[t]), np.sin(roll[t])
        roll_rot = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1.0]])
        rot6d[t] = matrix_to_rot6d(base_rot @ roll_rot)
        curl = (tpl["curl_base"]
                + tpl["curl_amp"] * (0.5 - 0.5 * np.cos(2 * np.pi * freq * tau[t])))
        for f in range(5):
            f_scale = 1.0 - 0.08 * f
            for s, frac in enumerate((1.0, 0.8, 0.6)):
                artic[t, 3 * f + s] = _curl_rot6d(curl * frac * f_scale)

    groups = vertex_groups()
    region = np.sort(groups[tpl["contact_group"]])
    contacts = np.zeros((horizon, 778), dtype=np.uint8)
    if action in _ROLLING_CONTACT and len(region) >= 8:
        # sliding window over the region so the contact patch drifts over time
        win = max(len(region) * 7 // 10, 1)
        for t in range(horizon):
            shift = int((len(region) - win) * (0.5 + 0.5 * np.sin(
                2 * np.pi * freq * tau[t] + phase)))
            contacts[t, region[shift:shift + win]] = 1
    else:
        contacts[:, region] = 1

    beta = rng.normal(0, 0.3, size=10)
    traj = InteractionTrajectory(
        beta=beta, articulation=artic, rot6d=rot6d, trans=trans,
        contacts=contacts, action_label=action, object_label=obj,
        scene_label=scene)
    desc = SceneDescriptor(
        object_label=obj, scene_label=scene,
        object_position=tuple(start + amp * 0.5 * tpl["direction"]),
        object_yaw=float(base_yaw),
        wrist_path=tuple(tuple(p) for p in trans))
    return traj, desc


def generate_dataset(config: GeneratorConfig) -> SyntheticDataset:
    """Deterministic procedural dataset; byte-identical for a fixed seed."""
    actions = ACTION_NAMES[:config.num_actions]
    objects = OBJECT_NAMES[:config.num_objects]
    weights = np.asarray(config.scene_weights, dtype=np.float64)
    weights = weights / weights.sum()
    rng = _hash_rng("dataset", config.seed)
    trajectories, descriptors = [], []
    for i in range(config.num_sequences):
        action = actions[int(rng.integers(len(actions)))]
        obj = objects[int(rng.integers(len(objects)))]
        scene = config.scenes[int(rng.choice(2, p=weights))]
        traj, desc = _generate_sequence(i, action, obj, scene,
                                        config.horizon, config.seed)
        trajectories.append(traj)
        descriptors.append(desc)
    return SyntheticDataset(trajectories, descriptors, config)


@dataclass
class SplitSpec:
    mode: str
    heldout_labels: List[str]
    train_ids: List[int]
    val_ids: List[int]
    test_ids: List[int]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=1))

    @staticmethod
    def load(path) -> "SplitSpec":
        return SplitSpec(**json.loads(Path(path).read_text()))


def _subset_sum_pick(counts: List[int], target: int, rng: np.random.Generator):
    """Indices of a category subset whose size sum is closest to target."""
    order = rng.permutation(len(counts))
    total = sum(counts)
    # reachable[s] = (category position in `order`, previous sum) backtracking
    reachable = {0: None}
    for pos in order:
        c = counts[pos]
        for s in sorted(reachable.keys(), reverse=True):
            ns = s + c
            if ns <= total and ns not in reachable:
                reachable[ns] = (pos, s)
    best = min(reachable.keys(), key=lambda s: (abs(s - target), s))
    picked = []
    s = best
    while reachable[s] is not None:
        pos, prev = reachable[s]
        picked.append(pos)
        s = prev
    return picked


def make_splits(dataset: SyntheticDataset, mode: str, seed: int = 0) -> SplitSpec:
    """80:10:10 split with category-level holdout for the test set.

    object/action/task modes: test categories are disjoint from training
    categories (task = (action, object) pair); validation is drawn at the
    sequence level from the remainder. scene mode: the minority scene is
    held out of training and shared between val and test.
    """
    if mode not in SPLIT_MODES:
        raise ValueError(f"mode must be one of {SPLIT_MODES}")
    n = len(dataset)
    if n < 10:
        raise ValueError("dataset too small to split 80:10:10")
    n_test = int(round(0.1 * n))
    n_val = int(round(0.1 * n))
    rng = _hash_rng("split", mode, seed)

    def key_of(traj):
        if mode == "object":
            return traj.object_label
        if mode == "action":
            return traj.action_label
        if mode == "task":
            return f"{traj.action_label}|{traj.object_label}"
        return traj.scene_label

    keys = [key_of(t) for t in dataset.trajectories]

    if mode == "scene":
        labels, counts = np.unique(keys, return_counts=True)
        heldout = labels[np.argmin(counts)]
        held_ids = [i for i, k in enumerate(keys) if k == heldout]
        rest_ids = [i for i, k in enumerate(keys) if k != heldout]
        if len(held_ids) < n_test:
            raise ValueError("held-out scene has too few sequences for the split")
        if len(held_ids) > n_test + n_val:
            raise ValueError("held-out scene exceeds the val+test budget; "
                             "rebalance scene weights")
        held_ids = [held_ids[i] for i in rng.permutation(len(held_ids))]
        test_ids = held_ids[:n_test]
        val_ids = held_ids[n_test:]
        rest_ids = [rest_ids[i] for i in rng.permutation(len(rest_ids))]
        need = n_val - len(val_ids)
        val_ids = val_ids + rest_ids[:need]
        train_ids = rest_ids[need:]
        return SplitSpec(mode=mode, heldout_labels=[str(heldout)],
                         train_ids=sorted(train_ids), val_ids=sorted(val_ids),
                         test_ids=sorted(test_ids))

    categories = sorted(set(keys))
    counts = [keys.count(c) for c in categories]
    if len(categories) < 3:
        raise ValueError(f"not enough {mode} categories to hold some out")
    picked = _subset_sum_pick(counts, n_test, rng)
    heldout = {categories[i] for i in picked}
    test_ids = [i for i, k in enumerate(keys) if k in heldout]
    pool = [i for i, k in enumerate(keys) if k not in heldout]
    pool = [pool[i] for i in rng.permutation(len(pool))]
    n_val_eff = min(n_val, len(pool))
    val_ids = pool[:n_val_eff]
    train_ids = pool[n_val_eff:]
    return SplitSpec(mode=mode, heldout_labels=sorted(heldout),
                     train_ids=sorted(train_ids), val_ids=sorted(val_ids),
                     test_ids=sorted(test_ids))


def save_descriptors(path, descriptors: Sequence[SceneDescriptor]) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in descriptors]))


def load_descriptors(path) -> List[SceneDescriptor]:
    return [SceneDescriptor.from_dict(d)
            for d in json.loads(Path(path).read_text())]
