"""Flat run configuration: `key = value` lines with JSON-encoded values.

Every known key has a default; unknown keys are rejected with the full
list of valid names so typos surface immediately. `dump_config` emits
keys sorted, so a config echoes byte-identically regardless of input
order.
"""

from __future__ import annotations

import json
import os

from .errors import ConfigError, MissingFileError

DEFAULTS = {
    # detection classes and anchor templates
    "categories": ["Car", "Pedestrian", "Cyclist"],
    "mean_sizes": {
        "Car": [3.88, 1.63, 1.53],
        "Pedestrian": [0.88, 0.67, 1.77],
        "Cyclist": [1.78, 0.60, 1.73],
    },
    "num_yaw_bins": 12,
    # network and frustum discretization
    "preset": "kitti-4block",
    "depth_min": 0.0,
    "depth_max": 70.0,
    "slab_stride": 0.25,
    "slab_extent": 0.5,
    "point_samples": 1024,
    # training
    "batch_size": 32,
    "epochs": 50,
    "max_steps": 0,
    "learning_rate": 1e-3,
    "lr_decay_epochs": [20, 40],
    "lr_decay": 0.1,
    "weight_decay": 1e-4,
    "seed": 0,
    "focal_gamma": 2.0,
    "focal_alpha": 0.25,
    "reg_weight": 1.0,
    "corner_weight": 10.0,
    # augmentation
    "augment": True,
    "jitter_frac": 0.1,
    "scale_frac": 0.1,
    "flip_prob": 0.5,
    "shift_max": 1.0,
    # inference and refinement
    "fg_threshold": 0.1,
    "nms_iou": 0.1,
    "refine_expand": 1.2,
    "refine_min_points": 5,
    "refine_samples": 512,
    "refine_yaw_bins": 2,
    "refine_preset": "toy",
    # evaluation
    "eval_iou": {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5},
    "eval_points": 11,
    # synthetic data
    "synth_box_count": 2,
    "synth_clutter": 200,
    "synth_points_per_box": 400,
    "synth_depth_min": 6.0,
    "synth_depth_max": 40.0,
    "synth_noise": 0.02,
}


def default_config() -> dict:
    return json.loads(json.dumps(DEFAULTS))


def _check_key(key: str, where: str):
    if key not in DEFAULTS:
        raise ConfigError(
            f"{where}: unknown key {key!r}; valid keys: {', '.join(sorted(DEFAULTS))}"
        )


def _check_type(key: str, value, where: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(
            f"{where}: {key} expects {type(default).__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def apply_setting(cfg: dict, key: str, raw: str, where: str = "override"):
    _check_key(key, where)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{where}: value for {key} is not valid JSON: {raw!r}") from exc
    cfg[key] = _check_type(key, value, where)


def load_config(path) -> dict:
    """Defaults overlaid with the file's settings."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    cfg = default_config()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            apply_setting(cfg, key.strip(), raw.strip(), f"{path}:{lineno}")
    return cfg


def parse_overrides(pairs) -> dict:
    """CLI-style key=value strings checked against the registry."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, _, raw = pair.partition("=")
        apply_setting(out, key.strip(), raw.strip())
    return out


def merge_config(cfg: dict, overrides: dict) -> dict:
    out = dict(cfg)
    out.update(overrides)
    return out


def dump_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        _check_key(key, "dump")
        lines.append(f"{key} = {json.dumps(cfg[key], sort_keys=True)}")
    return "\n".join(lines) + "\n"


def save_config(path, cfg: dict):
    with open(path, "w") as fh:
        fh.write(dump_config(cfg))
