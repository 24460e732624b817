"""KITTI-style dataset files: velodyne .bin, calib txt, label txt, proposal txt.

Text serialization uses %.12g so load(save(x)) recovers values to better
than 1e-9 relative error.
"""

from __future__ import annotations

import os

import numpy as np

from ..boxes import OrientedBox3D, wrap_angle
from ..errors import MalformedFileError, MissingFileError
from .types import (
    FRAME_SENSOR,
    CameraCalib,
    LabeledBox,
    PointCloud,
    RegionProposal2D,
)

RECORD_BYTES = 16

# (min pixel height, max occlusion level, max truncation) per difficulty tier.
DIFFICULTY_THRESHOLDS = (
    ("easy", 40.0, 0, 0.15),
    ("moderate", 25.0, 1, 0.30),
    ("hard", 25.0, 2, 0.50),
)

IGNORE_CATEGORY = "DontCare"


def _fmt(x: float) -> str:
    return "%.12g" % float(x)


def _require(path):
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")


def load_cloud(path) -> PointCloud:
    """Read a little-endian float32 x/y/z/intensity record file."""
    _require(path)
    raw = np.fromfile(path, dtype="<f4")
    if raw.nbytes % RECORD_BYTES != 0:
        raise MalformedFileError(
            f"{path}: size {raw.nbytes} is not a multiple of {RECORD_BYTES} bytes"
        )
    records = raw.reshape(-1, 4)
    if not np.all(np.isfinite(records)):
        raise MalformedFileError(f"{path}: non-finite point record")
    return PointCloud(records[:, :3], records[:, 3], frame=FRAME_SENSOR)


def save_cloud(path, cloud: PointCloud):
    records = np.zeros((len(cloud), 4), dtype="<f4")
    records[:, :3] = cloud.points
    if cloud.intensities is not None:
        records[:, 3] = cloud.intensities
    records.tofile(path)


def load_calib(path) -> CameraCalib:
    _require(path)
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if ":" not in line:
                raise MalformedFileError(f"{path}: expected 'key: values' line, got {line!r}")
            key, _, rest = line.partition(":")
            try:
                entries[key.strip()] = np.array([float(tok) for tok in rest.split()])
            except ValueError as exc:
                raise MalformedFileError(f"{path}: bad number in {key!r} row") from exc
    shapes = {"P2": (3, 4), "R0_rect": (3, 3), "Tr_velo_to_cam": (3, 4)}
    mats = {}
    for key, shape in shapes.items():
        if key not in entries:
            raise MalformedFileError(f"{path}: missing calibration row {key!r}")
        vals = entries[key]
        if vals.size != shape[0] * shape[1]:
            raise MalformedFileError(
                f"{path}: row {key!r} has {vals.size} values, expected {shape[0] * shape[1]}"
            )
        mats[key] = vals.reshape(shape)
    try:
        return CameraCalib(mats["P2"], mats["R0_rect"], mats["Tr_velo_to_cam"])
    except ValueError as exc:
        raise MalformedFileError(f"{path}: {exc}") from exc


def save_calib(path, calib: CameraCalib):
    rows = [
        ("P2", calib.projection),
        ("R0_rect", calib.rect_rotation),
        ("Tr_velo_to_cam", calib.sensor_to_camera),
    ]
    with open(path, "w") as fh:
        for key, mat in rows:
            fh.write(key + ": " + " ".join(_fmt(v) for v in mat.ravel()) + "\n")


def assign_difficulty(pixel_height: float, occlusion: int, truncation: float) -> str:
    for name, min_h, max_occ, max_trunc in DIFFICULTY_THRESHOLDS:
        if pixel_height >= min_h and occlusion <= max_occ and truncation <= max_trunc:
            return name
    return "ignore"


def load_labels(path, known_categories=None) -> list:
    """Parse a label file into volumetric-center boxes with difficulty tiers."""
    _require(path)
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) < 15:
                raise MalformedFileError(
                    f"{path}:{lineno}: {len(tokens)} fields, expected at least 15"
                )
            category = tokens[0]
            try:
                vals = [float(tok) for tok in tokens[1:15]]
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: bad number") from exc
            truncation, occlusion_f, alpha = vals[0], vals[1], vals[2]
            bbox2d = tuple(vals[3:7])
            h, w, l = vals[7], vals[8], vals[9]
            bottom = np.array(vals[10:13])
            yaw = vals[13]
            occlusion = int(occlusion_f)
            difficulty = assign_difficulty(
                bbox2d[3] - bbox2d[1], occlusion, truncation
            )
            if category == IGNORE_CATEGORY:
                difficulty = "ignore"
                # DontCare rows carry placeholder extents; keep a unit box.
                h = w = l = max(h, 1.0) if h > 0 else 1.0
            elif known_categories is not None and category not in known_categories:
                difficulty = "ignore"
            center = bottom - np.array([0.0, h / 2.0, 0.0])
            box = OrientedBox3D(center, (l, w, h), yaw)
            labels.append(
                LabeledBox(box, category, difficulty, truncation, occlusion, alpha, bbox2d)
            )
    return labels


def save_labels(path, labels):
    with open(path, "w") as fh:
        for lab in labels:
            box = lab.box
            bottom = box.center + np.array([0.0, box.h / 2.0, 0.0])
            fields = [
                lab.category,
                _fmt(lab.truncation),
                str(int(lab.occlusion)),
                _fmt(lab.alpha),
                _fmt(lab.bbox2d[0]),
                _fmt(lab.bbox2d[1]),
                _fmt(lab.bbox2d[2]),
                _fmt(lab.bbox2d[3]),
                _fmt(box.h),
                _fmt(box.w),
                _fmt(box.l),
                _fmt(bottom[0]),
                _fmt(bottom[1]),
                _fmt(bottom[2]),
                _fmt(box.yaw),
            ]
            fh.write(" ".join(fields) + "\n")


def load_proposals(path) -> dict:
    """Read `frame_id category u_min v_min u_max v_max score` rows per frame."""
    _require(path)
    per_frame = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 7:
                raise MalformedFileError(
                    f"{path}:{lineno}: {len(tokens)} fields, expected 7"
                )
            frame_id, category = tokens[0], tokens[1]
            try:
                u_min, v_min, u_max, v_max, score = (float(t) for t in tokens[2:])
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: bad number") from exc
            try:
                prop = RegionProposal2D((u_min, v_min, u_max, v_max), category, score)
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: {exc}") from exc
            per_frame.setdefault(frame_id, []).append(prop)
    return per_frame


def save_proposals(path, per_frame: dict):
    with open(path, "w") as fh:
        for frame_id in sorted(per_frame):
            for prop in per_frame[frame_id]:
                u_min, v_min, u_max, v_max = prop.image_box
                fh.write(
                    " ".join(
                        [
                            frame_id,
                            prop.category,
                            _fmt(u_min),
                            _fmt(v_min),
                            _fmt(u_max),
                            _fmt(v_max),
                            _fmt(prop.score_2d),
                        ]
                    )
                    + "\n"
                )


def kitti_alpha(box: OrientedBox3D) -> float:
    """Observation angle: yaw minus the azimuth of the box center."""
    return wrap_angle(box.yaw - np.arctan2(box.center[0], box.center[2]))


def scene_paths(root, frame_id: str) -> dict:
    return {
        "cloud": os.path.join(root, "velodyne", frame_id + ".bin"),
        "calib": os.path.join(root, "calib", frame_id + ".txt"),
        "labels": os.path.join(root, "label_2", frame_id + ".txt"),
    }


def proposals_path(root) -> str:
    return os.path.join(root, "proposals.txt")


def list_frames(root) -> list:
    cloud_dir = os.path.join(root, "velodyne")
    if not os.path.isdir(cloud_dir):
        raise MissingFileError(f"no such directory: {cloud_dir}")
    return sorted(
        name[:-4] for name in os.listdir(cloud_dir) if name.endswith(".bin")
    )


def write_scene(root, scene):
    """Write one scene into the velodyne/calib/label_2 layout."""
    paths = scene_paths(root, scene.frame_id)
    for path in paths.values():
        os.makedirs(os.path.dirname(path), exist_ok=True)
    save_cloud(paths["cloud"], scene.cloud)
    save_calib(paths["calib"], scene.calib)
    if scene.labels is not None:
        save_labels(paths["labels"], scene.labels)


def load_scene(root, frame_id: str, proposals=None, known_categories=None):
    """Load one scene; cloud is returned already mapped to the camera frame."""
    from .types import SceneSample, sensor_to_rect

    paths = scene_paths(root, frame_id)
    cloud = load_cloud(paths["cloud"])
    calib = load_calib(paths["calib"])
    labels = None
    if os.path.exists(paths["labels"]):
        labels = load_labels(paths["labels"], known_categories)
    return SceneSample(
        frame_id,
        sensor_to_rect(cloud, calib),
        calib,
        list(proposals) if proposals else [],
        labels,
    )
