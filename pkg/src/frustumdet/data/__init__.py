from .augment import (
    AugmentConfig,
    PointAugmentation,
    augment_points,
    augment_proposal,
    sample_point_augmentation,
)
from .kitti import (
    assign_difficulty,
    list_frames,
    load_calib,
    load_cloud,
    load_labels,
    load_proposals,
    load_scene,
    proposals_path,
    save_calib,
    save_cloud,
    save_labels,
    save_proposals,
    write_scene,
)
from .sampling import points_in_proposal, project_points, sample_fixed
from .synth import DEFAULT_TEMPLATES, SynthConfig, make_synthetic_scene
from .types import (
    FRAME_CAMERA_RECT,
    FRAME_SENSOR,
    CameraCalib,
    LabeledBox,
    PointCloud,
    RegionProposal2D,
    SceneSample,
    difficulty_rank,
    sensor_to_rect,
)

__all__ = [
    "AugmentConfig",
    "PointAugmentation",
    "augment_points",
    "augment_proposal",
    "sample_point_augmentation",
    "assign_difficulty",
    "list_frames",
    "load_calib",
    "load_cloud",
    "load_labels",
    "load_proposals",
    "load_scene",
    "proposals_path",
    "save_calib",
    "save_cloud",
    "save_labels",
    "save_proposals",
    "write_scene",
    "points_in_proposal",
    "project_points",
    "sample_fixed",
    "DEFAULT_TEMPLATES",
    "SynthConfig",
    "make_synthetic_scene",
    "FRAME_CAMERA_RECT",
    "FRAME_SENSOR",
    "CameraCalib",
    "LabeledBox",
    "PointCloud",
    "RegionProposal2D",
    "SceneSample",
    "difficulty_rank",
    "sensor_to_rect",
]
