"""Training-time augmentation for proposals and frustum points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..boxes import OrientedBox3D, wrap_angle
from .types import RegionProposal2D


@dataclass(frozen=True)
class AugmentConfig:
    jitter_frac: float = 0.1
    scale_frac: float = 0.1
    flip_prob: float = 0.5
    shift_max: float = 1.0


def augment_proposal(
    proposal: RegionProposal2D, rng: np.random.Generator, cfg: AugmentConfig
) -> RegionProposal2D:
    """Jitter the pixel box center and rescale it around the jittered center."""
    u_min, v_min, u_max, v_max = proposal.image_box
    width, height = u_max - u_min, v_max - v_min
    cu = 0.5 * (u_min + u_max) + rng.uniform(-cfg.jitter_frac, cfg.jitter_frac) * width
    cv = 0.5 * (v_min + v_max) + rng.uniform(-cfg.jitter_frac, cfg.jitter_frac) * height
    scale = 1.0 + rng.uniform(-cfg.scale_frac, cfg.scale_frac)
    half_w, half_h = 0.5 * width * scale, 0.5 * height * scale
    return RegionProposal2D(
        (cu - half_w, cv - half_h, cu + half_w, cv + half_h),
        proposal.category,
        proposal.score_2d,
    )


@dataclass(frozen=True)
class PointAugmentation:
    """One sampled draw: optional lateral mirror plus a depth shift."""

    flip: bool
    shift: float

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        points = np.array(points, float)
        if self.flip:
            points[:, 0] = -points[:, 0]
        points[:, 2] += self.shift
        return points

    def apply_box(self, box: OrientedBox3D) -> OrientedBox3D:
        center = np.array(box.center)
        yaw = box.yaw
        if self.flip:
            center[0] = -center[0]
            yaw = wrap_angle(np.pi - yaw)
        center[2] += self.shift
        return OrientedBox3D(center, box.sizes, yaw)


def sample_point_augmentation(
    rng: np.random.Generator, cfg: AugmentConfig
) -> PointAugmentation:
    flip = bool(rng.random() < cfg.flip_prob)
    shift = float(rng.uniform(-cfg.shift_max, cfg.shift_max))
    return PointAugmentation(flip, shift)


def augment_points(points, rng, cfg, boxes=()):
    """Draw one augmentation and apply it to points and any attached boxes."""
    aug = sample_point_augmentation(rng, cfg)
    return aug.apply_points(points), [aug.apply_box(b) for b in boxes]
