"""Synthetic scene generator: boxes on a ground plane seen by a pinhole camera.

Point samples live on the faces a camera at the origin can see, with
Gaussian surface noise. Proposals are the exact pixel bounds of the
projected corners, so 2D localization error is zero unless jittered later.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..boxes import OrientedBox3D, corners, intersection_area_bev, points_in_box
from ..errors import GenerationError
from .kitti import assign_difficulty, kitti_alpha
from .sampling import project_points
from .types import (
    FRAME_CAMERA_RECT,
    CameraCalib,
    LabeledBox,
    PointCloud,
    RegionProposal2D,
    SceneSample,
)

DEFAULT_TEMPLATES = {
    "Car": (3.88, 1.63, 1.53),
    "Pedestrian": (0.88, 0.67, 1.77),
    "Cyclist": (1.78, 0.60, 1.73),
}

# Face index -> (axis in box frame, sign). Axis 0 spans l, 1 spans h, 2 spans w.
_FACES = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)]


@dataclass(frozen=True)
class SynthConfig:
    templates: dict = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    categories: tuple = ("Car",)
    box_count: int = 2
    depth_range: tuple = (6.0, 40.0)
    ground_y: float = 1.65
    size_jitter_frac: float = 0.1
    noise_sigma: float = 0.02
    points_per_box: int = 400
    clutter_points: int = 200
    image_size: tuple = (1242.0, 375.0)
    focal: float = 721.0
    margin_px: float = 2.0
    score_range: tuple = (0.7, 1.0)
    max_retries: int = 100

    def __post_init__(self):
        for cat in self.categories:
            if cat not in self.templates:
                raise ValueError(f"category {cat!r} has no size template")


def _project_ok(box, calib, cfg):
    """Corner pixels and whether the whole box is visible in-image."""
    pts = corners(box)
    uv, depth = project_points(pts, calib)
    width, height = cfg.image_size
    ok = (
        np.all(depth > 0)
        and np.all(uv[:, 0] >= cfg.margin_px)
        and np.all(uv[:, 0] <= width - cfg.margin_px)
        and np.all(uv[:, 1] >= cfg.margin_px)
        and np.all(uv[:, 1] <= height - cfg.margin_px)
    )
    return uv, ok


def _place_box(cfg, calib, rng, placed, category):
    template = np.array(cfg.templates[category], float)
    jit = cfg.size_jitter_frac
    sizes = template * (1.0 + rng.uniform(-jit, jit, size=3))
    yaw = rng.uniform(-np.pi, np.pi)
    center_y = cfg.ground_y - sizes[2] / 2.0
    width = cfg.image_size[0]
    cx = width / 2.0
    for _ in range(cfg.max_retries):
        z = rng.uniform(*cfg.depth_range)
        x_lo = z * (cfg.margin_px - cx) / cfg.focal
        x_hi = z * (width - cfg.margin_px - cx) / cfg.focal
        x = rng.uniform(x_lo, x_hi)
        box = OrientedBox3D((x, center_y, z), sizes, yaw)
        uv, visible = _project_ok(box, calib, cfg)
        if not visible:
            continue
        if any(intersection_area_bev(box, other) > 1e-9 for other in placed):
            continue
        return box, uv
    raise GenerationError(
        f"could not place a {category} box after {cfg.max_retries} attempts"
    )


def _visible_faces(box):
    """Faces whose outward normal points toward a camera at the origin."""
    rot = np.array(
        [
            [np.cos(box.yaw), 0.0, np.sin(box.yaw)],
            [0.0, 1.0, 0.0],
            [-np.sin(box.yaw), 0.0, np.cos(box.yaw)],
        ]
    )
    half = np.array([box.l, box.h, box.w]) / 2.0
    # Columns of rot are the world directions of the l, h, w box axes.
    frame = rot
    visible = []
    for axis, sign in _FACES:
        normal = sign * frame[:, axis]
        face_center = box.center + normal * half[axis]
        if float(normal @ face_center) < 0.0:
            visible.append((axis, sign))
    return visible, frame, half


def _sample_surface(box, count, sigma, rng):
    faces, frame, half = _visible_faces(box)
    if not faces:
        return np.zeros((0, 3))
    areas = []
    for axis, _ in faces:
        others = [k for k in range(3) if k != axis]
        areas.append(4.0 * half[others[0]] * half[others[1]])
    areas = np.array(areas)
    counts = np.floor(count * areas / areas.sum()).astype(int)
    counts[: count - counts.sum()] += 1
    pts = []
    for (axis, sign), n in zip(faces, counts):
        if n == 0:
            continue
        others = [k for k in range(3) if k != axis]
        local = np.zeros((n, 3))
        local[:, axis] = sign * half[axis]
        local[:, others[0]] = rng.uniform(-half[others[0]], half[others[0]], size=n)
        local[:, others[1]] = rng.uniform(-half[others[1]], half[others[1]], size=n)
        world = box.center + local @ frame.T
        pts.append(world + rng.normal(0.0, sigma, size=world.shape))
    return np.vstack(pts)


def _sample_clutter(cfg, calib, boxes, rng):
    count = cfg.clutter_points
    if count == 0:
        return np.zeros((0, 3))
    width, height = cfg.image_size
    inv_f = 1.0 / cfg.focal
    cx, cy = width / 2.0, height / 2.0
    pts = np.zeros((count, 3))
    pending = np.arange(count)
    for _ in range(cfg.max_retries):
        n = pending.size
        if n == 0:
            return pts
        u = rng.uniform(0.0, width, size=n)
        v = rng.uniform(0.0, height, size=n)
        z = rng.uniform(cfg.depth_range[0], cfg.depth_range[1], size=n)
        cand = np.stack([(u - cx) * z * inv_f, (v - cy) * z * inv_f, z], axis=1)
        inside = np.zeros(n, dtype=bool)
        for box in boxes:
            inside |= points_in_box(box, cand)
        pts[pending] = cand
        pending = pending[inside]
    raise GenerationError("clutter sampling kept landing inside boxes")


def make_synthetic_scene(
    cfg: SynthConfig, rng: np.random.Generator, frame_id: str = "000000"
) -> SceneSample:
    """Generate one fully-annotated scene; deterministic given the generator."""
    width, height = cfg.image_size
    calib = CameraCalib.simple(cfg.focal, width / 2.0, height / 2.0)
    boxes, labels, proposals = [], [], []
    for _ in range(cfg.box_count):
        category = cfg.categories[rng.integers(len(cfg.categories))]
        box, uv = _place_box(cfg, calib, rng, boxes, category)
        boxes.append(box)
        bbox2d = (
            float(uv[:, 0].min()),
            float(uv[:, 1].min()),
            float(uv[:, 0].max()),
            float(uv[:, 1].max()),
        )
        difficulty = assign_difficulty(bbox2d[3] - bbox2d[1], 0, 0.0)
        labels.append(
            LabeledBox(box, category, difficulty, 0.0, 0, kitti_alpha(box), bbox2d)
        )
        score = rng.uniform(*cfg.score_range)
        proposals.append(RegionProposal2D(bbox2d, category, float(score)))
    surface = [
        _sample_surface(box, cfg.points_per_box, cfg.noise_sigma, rng) for box in boxes
    ]
    clutter = _sample_clutter(cfg, calib, boxes, rng)
    pts = np.vstack(surface + [clutter]) if boxes or cfg.clutter_points else np.zeros((0, 3))
    order = rng.permutation(pts.shape[0])
    cloud = PointCloud(pts[order], rng.random(pts.shape[0]), frame=FRAME_CAMERA_RECT)
    return SceneSample(frame_id, cloud, calib, proposals, labels)
