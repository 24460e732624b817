"""Shared fixtures: small configs, synthetic scenes, random box factories."""

import numpy as np
import pytest

from frustumdet.boxes import OrientedBox3D
from frustumdet.config import default_config, merge_config
from frustumdet.data.synth import SynthConfig, make_synthetic_scene


def toy_pipeline_config(**overrides):
    """Config for the 32-slab toy preset on a short depth window."""
    base = {
        "preset": "toy",
        "depth_min": 4.0,
        "depth_max": 12.0,
        "slab_stride": 0.25,
        "slab_extent": 0.5,
        "point_samples": 256,
        "num_yaw_bins": 4,
        "categories": ["Car"],
        "batch_size": 10,
        "epochs": 300,
        "max_steps": 300,
        "learning_rate": 0.001,
        "lr_decay_epochs": [1000],
        "lr_decay": 0.1,
        "augment": True,
    }
    base.update(overrides)
    return merge_config(default_config(), base)


def toy_synth_config(**overrides):
    """Single-category car scenes sitting inside the toy depth window."""
    kw = dict(
        categories=("Car",),
        box_count=1,
        clutter_points=40,
        points_per_box=300,
        depth_range=(5.5, 10.5),
        noise_sigma=0.01,
        score_range=(0.9, 1.0),
    )
    kw.update(overrides)
    return SynthConfig(**kw)


def make_scenes(n, seed=11, **synth_overrides):
    rng = np.random.default_rng(seed)
    sc = toy_synth_config(**synth_overrides)
    return [make_synthetic_scene(sc, rng, f"{i:06d}") for i in range(n)]


def random_box(rng, center_range=5.0, size_range=(0.5, 4.0)):
    center = rng.uniform(-center_range, center_range, 3)
    sizes = rng.uniform(size_range[0], size_range[1], 3)
    yaw = rng.uniform(-np.pi, np.pi)
    return OrientedBox3D(center, sizes, yaw)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
