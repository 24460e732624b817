"""Point selection: frustum membership and fixed-size resampling."""

from __future__ import annotations

import numpy as np

from .types import FRAME_CAMERA_RECT, CameraCalib, PointCloud, RegionProposal2D


def project_points(points: np.ndarray, calib: CameraCalib):
    """Project camera-frame points; returns (N, 2) pixels and depth array."""
    points = np.asarray(points, float).reshape(-1, 3)
    hom = points @ calib.projection[:, :3].T + calib.projection[:, 3]
    depth = hom[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = hom[:, :2] / depth[:, None]
    return uv, depth


def points_in_proposal(
    cloud: PointCloud, calib: CameraCalib, proposal: RegionProposal2D
) -> np.ndarray:
    """Indices of points that project inside the box with positive depth.

    The pixel box is closed on all sides. Output preserves input order.
    """
    if cloud.frame != FRAME_CAMERA_RECT:
        raise ValueError(f"expected camera-frame cloud, got {cloud.frame!r}")
    uv, depth = project_points(cloud.points, calib)
    u_min, v_min, u_max, v_max = proposal.image_box
    mask = (
        (depth > 0)
        & (uv[:, 0] >= u_min)
        & (uv[:, 0] <= u_max)
        & (uv[:, 1] >= v_min)
        & (uv[:, 1] <= v_max)
    )
    return np.flatnonzero(mask)


def sample_fixed(indices: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Resample to exactly `count` indices, with replacement only when short.

    Indices are sorted before drawing so the result depends on the index set
    and seed, not on the order membership happened to produce.
    """
    indices = np.sort(np.asarray(indices, dtype=np.int64))
    if indices.size == 0:
        return indices
    if indices.size >= count:
        return rng.choice(indices, size=count, replace=False)
    return rng.choice(indices, size=count, replace=True)
