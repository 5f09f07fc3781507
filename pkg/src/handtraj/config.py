"""Flat key=value run configuration with include support.

Files hold one ``key = value`` pair per line; ``#`` starts a comment. An
``include = other.cfg`` line (resolved relative to the including file) is
processed first, so later keys override included ones. All keys are typed
against a fixed registry and unknown keys are rejected.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Iterable, Optional


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_CHOICES = {
    "variant": ("ltf", "ldiff", "ctf", "cdiff"),
    "task_mode": ("forecasting", "interpolation"),
    "split_mode": ("task", "object", "action", "scene"),
    "retrieval": ("argmax", "sample"),
}

# key -> (parser, default)
REGISTRY: Dict[str, tuple] = {
    # dataset generation
    "num_sequences": (int, 1000),
    "horizon": (int, 30),
    "data_seed": (int, 0),
    # splits and task setting
    "split_mode": (str, "task"),
    "split_seed": (int, 0),
    "task_mode": (str, "forecasting"),
    "hand_visible": (_bool, True),
    # codebook
    "codebook_entries": (int, 512),
    "code_dim": (int, 512),
    "num_quantizers": (int, 6),
    "gumbel_temp": (float, 0.5),
    "ema_decay": (float, 0.99),
    "dead_code_threshold": (float, 1.0),
    "commitment_weight": (float, 0.25),
    "dropout": (float, 0.2),
    # predictor
    "variant": (str, "ltf"),
    "predictor_width": (int, 512),
    "diffusion_steps": (int, 50),
    "retrieval": (str, "argmax"),
    # training
    "codebook_epochs": (int, 100),
    "indexer_epochs": (int, 100),
    "predictor_epochs": (int, 100),
    "batch_size": (int, 32),
    "lr": (float, 1e-4),
    "lr_final": (float, -1.0),  # < 0 means constant lr
    "grad_clip": (float, 1.0),
    "train_seed": (int, 0),
    "sigma_voxels": (float, 1.0),
    "use_contact_loss": (_bool, True),
    # loss weights
    "w_articulation": (float, 1.0),
    "w_centroid": (float, 1.0),
    "w_translation": (float, 1.0),
    "w_rotation": (float, 1.0),
    "w_contact_bce": (float, 1.0),
    # evaluation
    "contact_threshold": (float, 0.5),
}


def default_config() -> dict:
    return {key: default for key, (_, default) in REGISTRY.items()}


def _set_key(cfg: dict, key: str, raw: str, where: str) -> None:
    if key not in REGISTRY:
        raise ConfigError(f"unknown config key {key!r} in {where}")
    parser, _ = REGISTRY[key]
    try:
        value = parser(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} in {where}: {exc}") from exc
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key!r} must be one of {_CHOICES[key]}, "
                          f"got {value!r} in {where}")
    cfg[key] = value


def _parse_file(path: Path, cfg: dict, seen: set) -> None:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"circular include of {path}")
    seen.add(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"expected key = value at {path}:{lineno}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key == "include":
            _parse_file(path.parent / raw, cfg, seen)
        else:
            _set_key(cfg, key, raw, f"{path}:{lineno}")


def load_config(path=None, overrides: Optional[Iterable[str]] = None) -> dict:
    """Defaults, then the file (with includes), then key=value overrides."""
    cfg = default_config()
    if path is not None:
        _parse_file(Path(path), cfg, set())
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, raw = item.split("=", 1)
        _set_key(cfg, key.strip(), raw, "command-line override")
    return cfg


def loss_weights(cfg: dict) -> dict:
    return {"articulation": cfg["w_articulation"], "centroid": cfg["w_centroid"],
            "translation": cfg["w_translation"], "rotation": cfg["w_rotation"],
            "contact_bce": cfg["w_contact_bce"]}
