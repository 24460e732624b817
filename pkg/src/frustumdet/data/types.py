"""Scene-level domain types: point clouds, calibration, proposals, labels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..boxes import OrientedBox3D

FRAME_SENSOR = "sensor"
FRAME_CAMERA_RECT = "camera_rect"

DIFFICULTIES = ("easy", "moderate", "hard", "ignore")
_DIFFICULTY_RANK = {"easy": 0, "moderate": 1, "hard": 2, "ignore": 3}


def difficulty_rank(difficulty: str) -> int:
    return _DIFFICULTY_RANK[difficulty]


class PointCloud:
    """Dense (N, 3) coordinates with optional per-point intensity."""

    __slots__ = ("points", "intensities", "frame")

    def __init__(self, points, intensities=None, frame: str = FRAME_SENSOR):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(points)):
            raise ValueError("point coordinates must be finite")
        if intensities is not None:
            intensities = np.asarray(intensities, dtype=float).reshape(-1)
            if intensities.shape[0] != points.shape[0]:
                raise ValueError(
                    f"{intensities.shape[0]} intensities for {points.shape[0]} points"
                )
        if frame not in (FRAME_SENSOR, FRAME_CAMERA_RECT):
            raise ValueError(f"unknown frame tag {frame!r}")
        self.points = points
        self.intensities = intensities
        self.frame = frame

    def __len__(self) -> int:
        return self.points.shape[0]


def _check_rotation(r: np.ndarray, name: str, tol: float = 1e-6):
    if not np.allclose(r @ r.T, np.eye(3), atol=tol):
        raise ValueError(f"{name} is not orthonormal within {tol}")


@dataclass(frozen=True, eq=False)
class CameraCalib:
    """Rectified projection (3x4), rectifying rotation, sensor-to-camera rigid map."""

    projection: np.ndarray
    rect_rotation: np.ndarray
    sensor_to_camera: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "projection", np.asarray(self.projection, float).reshape(3, 4))
        object.__setattr__(
            self, "rect_rotation", np.asarray(self.rect_rotation, float).reshape(3, 3)
        )
        object.__setattr__(
            self, "sensor_to_camera", np.asarray(self.sensor_to_camera, float).reshape(3, 4)
        )
        _check_rotation(self.rect_rotation, "rect_rotation")
        _check_rotation(self.sensor_to_camera[:, :3], "sensor_to_camera rotation")

    @classmethod
    def simple(cls, focal: float, cx: float, cy: float) -> "CameraCalib":
        """Pinhole camera at the origin with identity extrinsics."""
        projection = np.array(
            [[focal, 0.0, cx, 0.0], [0.0, focal, cy, 0.0], [0.0, 0.0, 1.0, 0.0]]
        )
        return cls(projection, np.eye(3), np.hstack([np.eye(3), np.zeros((3, 1))]))


@dataclass(frozen=True)
class RegionProposal2D:
    """2D detector output: pixel box, category id, confidence in [0, 1]."""

    image_box: tuple[float, float, float, float]
    category: str
    score_2d: float = 1.0

    def __post_init__(self):
        u_min, v_min, u_max, v_max = self.image_box
        if not (u_min < u_max and v_min < v_max):
            raise ValueError(f"degenerate image box {self.image_box}")
        if not np.isfinite(self.score_2d):
            raise ValueError("proposal score must be finite")

    @property
    def pixel_center(self) -> tuple[float, float]:
        u_min, v_min, u_max, v_max = self.image_box
        return 0.5 * (u_min + u_max), 0.5 * (v_min + v_max)


@dataclass(frozen=True, eq=False)
class LabeledBox:
    """Ground-truth box with its category, difficulty and KITTI side data."""

    box: OrientedBox3D
    category: str
    difficulty: str
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = 0.0
    bbox2d: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")


@dataclass(eq=False)
class SceneSample:
    """One scene: cloud + calibration + proposals, labels when annotated."""

    frame_id: str
    cloud: PointCloud
    calib: CameraCalib
    proposals: list = field(default_factory=list)
    labels: list | None = None


def sensor_to_rect(cloud: PointCloud, calib: CameraCalib) -> PointCloud:
    """Map a sensor-frame cloud into the rectified camera frame."""
    if cloud.frame != FRAME_SENSOR:
        raise ValueError(f"expected sensor-frame cloud, got {cloud.frame!r}")
    transform = calib.rect_rotation @ calib.sensor_to_camera
    pts = cloud.points @ transform[:, :3].T + transform[:, 3]
    return PointCloud(pts, cloud.intensities, frame=FRAME_CAMERA_RECT)
