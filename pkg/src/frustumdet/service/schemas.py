"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel


class HealthResponse(BaseModel):
    status: str
    version: str


class ConfigResponse(BaseModel):
    config: dict


class BoxModel(BaseModel):
    """Oriented box: center (x, y, z), sizes (l, w, h), yaw about +y."""

    center: list[float]
    sizes: list[float]
    yaw: float


class ProposalModel(BaseModel):
    image_box: list[float]
    category: str
    score_2d: float = 1.0


class LabelModel(BaseModel):
    category: str
    box: BoxModel
    difficulty: str = "easy"


class DetectionModel(BaseModel):
    frame_id: str = ""
    category: str
    box: BoxModel
    score_3d: float
    score_2d: float
    score_fused: float


class IouRequest(BaseModel):
    box_a: BoxModel
    box_b: BoxModel
    mode: str = "3d"


class IouResponse(BaseModel):
    iou: float
    mode: str


class NmsRequest(BaseModel):
    boxes: list[BoxModel]
    scores: list[float]
    iou_threshold: float = 0.1


class NmsResponse(BaseModel):
    keep: list[int]


class SynthRequest(BaseModel):
    count: int = 1
    seed: int = 0
    categories: list[str] = ["Car"]
    box_count: int = 2
    include_points: bool = False


class SceneModel(BaseModel):
    frame_id: str
    labels: list[LabelModel]
    proposals: list[ProposalModel]
    num_points: int
    points: list[list[float]] | None = None


class SynthResponse(BaseModel):
    scenes: list[SceneModel]


class DetectRequest(BaseModel):
    """Camera-frame points plus 2D proposals under a simple pinhole camera."""

    points: list[list[float]]
    proposals: list[ProposalModel]
    focal: float = 721.0
    cx: float = 621.0
    cy: float = 187.5
    frame_id: str = "query"
    refine: bool = False


class DetectResponse(BaseModel):
    detections: list[DetectionModel]


class CategoryResult(BaseModel):
    ap: float | None
    num_gt: int
    tp: int
    fp: int
    ignored: int


class EvaluateRequest(BaseModel):
    detections: dict[str, list[DetectionModel]]
    labels: dict[str, list[LabelModel]]
    iou_thresholds: dict[str, float] | None = None
    recall_points: int = 11
    difficulty: str = "hard"
    mode: str = "3d"


class EvaluateResponse(BaseModel):
    results: dict[str, CategoryResult]
