"""Amodal 3D object detection from frustum point cloud sequences."""

__version__ = "0.1.0"

from .boxes import OrientedBox3D, iou_3d, iou_bev, nms_rotated
from .config import default_config
from .errors import FrustumDetError

__all__ = [
    "OrientedBox3D",
    "iou_3d",
    "iou_bev",
    "nms_rotated",
    "default_config",
    "FrustumDetError",
    "__version__",
]
