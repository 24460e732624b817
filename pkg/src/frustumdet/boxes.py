"""Oriented 3D box algebra: anchors, offset codec, corners, rotated IoU, NMS.

Conventions (used throughout the package):
  - camera frame: x right, y down (gravity axis = +y), z forward.
  - a box is {center (x,y,z), sizes (l,w,h), yaw}; the center is the volumetric
    center, yaw rotates about the gravity axis with R_y(yaw) mapping the box
    length axis l onto the direction (cos yaw, 0, -sin yaw).
  - BEV = projection onto the (x, z) plane.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi
MIN_SIZE = 1e-3  # clamp floor for decoded sizes, meters
_DEGENERATE_AREA = 1e-12


def wrap_angle(a):
    """Wrap an angle (scalar or array) to [-pi, pi)."""
    return (a + np.pi) % TWO_PI - np.pi


def yaw_rotation(yaw: float) -> np.ndarray:
    """Rotation about the gravity (y) axis, local -> global."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


class OrientedBox3D:
    """7-parameter amodal box; yaw is normalized to [-pi, pi) on construction."""

    __slots__ = ("center", "sizes", "yaw")

    def __init__(self, center, sizes, yaw: float):
        center = np.asarray(center, dtype=float).reshape(3)
        sizes = np.asarray(sizes, dtype=float).reshape(3)
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(sizes)) and np.isfinite(yaw)):
            raise ValueError("box parameters must be finite")
        if np.any(sizes <= 0.0):
            raise ValueError(f"box sizes must be positive, got {tuple(sizes)}")
        self.center = center
        self.sizes = sizes
        self.yaw = float(wrap_angle(float(yaw)))

    @property
    def l(self) -> float:
        return float(self.sizes[0])

    @property
    def w(self) -> float:
        return float(self.sizes[1])

    @property
    def h(self) -> float:
        return float(self.sizes[2])

    @property
    def volume(self) -> float:
        return float(self.sizes[0] * self.sizes[1] * self.sizes[2])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.center, self.sizes, [self.yaw]])

    @classmethod
    def from_array(cls, a) -> "OrientedBox3D":
        a = np.asarray(a, dtype=float).reshape(7)
        return cls(a[:3], a[3:6], a[6])

    def translated(self, t) -> "OrientedBox3D":
        return OrientedBox3D(self.center + np.asarray(t, dtype=float), self.sizes, self.yaw)

    def scaled(self, factor: float) -> "OrientedBox3D":
        return OrientedBox3D(self.center, self.sizes * float(factor), self.yaw)

    def __repr__(self):
        c, s = tuple(self.center), tuple(self.sizes)
        return f"OrientedBox3D(center={c}, sizes={s}, yaw={self.yaw:.6f})"


@dataclass(frozen=True)
class BoxOffsets:
    """Regression offsets between a ground-truth box and an anchor."""

    dx: float
    dy: float
    dz: float
    dl: float
    dw: float
    dh: float
    dyaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.dl, self.dw, self.dh, self.dyaw])

    @classmethod
    def from_array(cls, a) -> "BoxOffsets":
        a = np.asarray(a, dtype=float).reshape(7)
        return cls(*(float(v) for v in a))


def encode(gt: OrientedBox3D, anchor: OrientedBox3D) -> BoxOffsets:
    """Offsets of gt relative to anchor: translation, relative sizes, wrapped yaw."""
    d = gt.center - anchor.center
    ds = (gt.sizes - anchor.sizes) / anchor.sizes
    dyaw = float(wrap_angle(gt.yaw - anchor.yaw))
    return BoxOffsets(d[0], d[1], d[2], ds[0], ds[1], ds[2], dyaw)


def decode(offsets: BoxOffsets, anchor: OrientedBox3D) -> tuple[OrientedBox3D, bool]:
    """Inverse of encode. Returns the box and a flag set when a size was clamped."""
    off = offsets.as_array()
    center = anchor.center + off[:3]
    sizes = anchor.sizes * (1.0 + off[3:6])
    clamped = bool(np.any(sizes < MIN_SIZE))
    sizes = np.maximum(sizes, MIN_SIZE)
    yaw = wrap_angle(anchor.yaw + off[6])
    return OrientedBox3D(center, sizes, yaw), clamped


def decode_batch(offsets: np.ndarray, anchors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized decode. offsets and anchors are (M, 7); returns (boxes (M, 7), clamp mask)."""
    offsets = np.asarray(offsets, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    out = np.empty_like(offsets)
    out[:, :3] = anchors[:, :3] + offsets[:, :3]
    sizes = anchors[:, 3:6] * (1.0 + offsets[:, 3:6])
    clamped = np.any(sizes < MIN_SIZE, axis=1)
    out[:, 3:6] = np.maximum(sizes, MIN_SIZE)
    out[:, 6] = wrap_angle(anchors[:, 6] + offsets[:, 6])
    return out, clamped


# Local corner offsets in (sign_l, sign_h, sign_w) order: 4 top corners
# (up = -y) counterclockwise in the (x, z) plane starting at (+l/2, +w/2),
# then the 4 bottom corners in the same (x, z) order.
_CORNER_SIGNS = np.array(
    [
        [+1, -1, +1],
        [-1, -1, +1],
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, +1],
        [-1, +1, +1],
        [-1, +1, -1],
        [+1, +1, -1],
    ],
    dtype=float,
)


def corners(box: OrientedBox3D) -> np.ndarray:
    """The 8 box corners, (8, 3), in the canonical order documented above."""
    half = 0.5 * box.sizes  # (l, w, h)
    local = _CORNER_SIGNS * np.array([half[0], half[2], half[1]])  # columns: x, y, z
    return local @ yaw_rotation(box.yaw).T + box.center


def corners_bev(box: OrientedBox3D) -> np.ndarray:
    """The 4 top corners projected to (x, z), counterclockwise."""
    return corners(box)[:4][:, [0, 2]]


def box_from_corners(c: np.ndarray) -> OrientedBox3D:
    """Recover (center, sizes, yaw) from corners in canonical order."""
    c = np.asarray(c, dtype=float).reshape(8, 3)
    center = c.mean(axis=0)
    length_edge = c[0] - c[1]
    width_edge = c[1] - c[2]
    l = float(np.linalg.norm(length_edge))
    w = float(np.linalg.norm(width_edge))
    h = float(abs(c[4, 1] - c[0, 1]))
    yaw = float(np.arctan2(-length_edge[2], length_edge[0]))
    return OrientedBox3D(center, (l, w, h), yaw)


def points_in_box(box: OrientedBox3D, points: np.ndarray, shrink: float = 1.0) -> np.ndarray:
    """Boolean mask of points inside the (optionally shrunken) oriented box.

    Faces are inclusive; shrink scales all three sizes about the center.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    local = (points - box.center) @ yaw_rotation(box.yaw)  # R^T applied row-wise
    half = 0.5 * shrink * box.sizes  # (l, w, h) against local (x, z, y)
    return (
        (np.abs(local[:, 0]) <= half[0])
        & (np.abs(local[:, 2]) <= half[1])
        & (np.abs(local[:, 1]) <= half[2])
    )


def _polygon_area(poly: np.ndarray) -> float:
    """Absolute shoelace area of a polygon given as (n, 2) vertices."""
    if len(poly) < 3:
        return 0.0
    x, z = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW clip polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        e1 = clip[i]
        e2 = clip[(i + 1) % n]
        ex, ez = e2[0] - e1[0], e2[1] - e1[1]
        inp = output
        output = []
        # inside = left of (or on) the directed edge e1 -> e2
        side = [ex * (p[1] - e1[1]) - ez * (p[0] - e1[0]) >= 0.0 for p in inp]
        for j, p in enumerate(inp):
            q = inp[(j + 1) % len(inp)]
            if side[j]:
                output.append(p)
            if side[j] != side[(j + 1) % len(inp)]:
                # edge p -> q crosses the clip line; append the intersection
                dx, dz = q[0] - p[0], q[1] - p[1]
                denom = ex * dz - ez * dx
                if denom != 0.0:
                    t = (ex * (e1[1] - p[1]) - ez * (e1[0] - p[0])) / denom
                    output.append((p[0] + t * dx, p[1] + t * dz))
    return np.array(output).reshape(-1, 2)


def intersection_area_bev(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact intersection area of the two yaw-rotated BEV rectangles."""
    inter = _clip_polygon(corners_bev(a), corners_bev(b))
    return _polygon_area(inter)


def iou_bev(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Rotated-rectangle IoU in bird's-eye view via exact polygon clipping."""
    area_a = a.l * a.w
    area_b = b.l * b.w
    if area_a < _DEGENERATE_AREA or area_b < _DEGENERATE_AREA:
        return 0.0
    inter = intersection_area_bev(a, b)
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, inter / union))


def iou_3d(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """3D IoU: BEV intersection area times vertical overlap, over volume union."""
    if a.volume < _DEGENERATE_AREA or b.volume < _DEGENERATE_AREA:
        return 0.0
    v_lo = max(a.center[1] - 0.5 * a.h, b.center[1] - 0.5 * b.h)
    v_hi = min(a.center[1] + 0.5 * a.h, b.center[1] + 0.5 * b.h)
    v_overlap = max(0.0, v_hi - v_lo)
    if v_overlap == 0.0:
        return 0.0
    inter = intersection_area_bev(a, b) * v_overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, inter / union))


def nms_rotated(detections, iou_threshold: float):
    """Greedy NMS over (box, score) pairs using 3D IoU.

    Suppression is by descending score with ties broken by input order;
    returns kept indices in that order.
    """
    boxes = [d[0] for d in detections]
    scores = np.array([d[1] for d in detections], dtype=float)
    if not np.all(np.isfinite(scores)):
        raise ValueError("detection scores must be finite")
    order = np.argsort(-scores, kind="stable")
    kept: list[int] = []
    suppressed = np.zeros(len(boxes), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(int(i))
        for j in order:
            if j == i or suppressed[j]:
                continue
            if iou_3d(boxes[i], boxes[j]) > iou_threshold:
                suppressed[j] = True
    return kept


def yaw_bin_centers(n: int) -> np.ndarray:
    """Centers of n equal yaw bins over [-pi, pi)."""
    if n < 1:
        raise ValueError("need at least one yaw bin")
    return -np.pi + (np.arange(n) + 0.5) * TWO_PI / n


@dataclass(frozen=True, eq=False)
class AnchorSet:
    """Template boxes per (slab position, category, yaw bin).

    centers: (L, 3) slab centroids in the frustum frame; mean_sizes: (K, 3)
    per-category (l, w, h); yaw_bins: (N,) bin centers.
    """

    centers: np.ndarray
    mean_sizes: np.ndarray
    yaw_bins: np.ndarray
    categories: tuple[str, ...]

    @property
    def num_slabs(self) -> int:
        return self.centers.shape[0]

    @property
    def num_categories(self) -> int:
        return self.mean_sizes.shape[0]

    @property
    def num_yaw_bins(self) -> int:
        return self.yaw_bins.shape[0]

    def __len__(self) -> int:
        return self.num_slabs * self.num_categories * self.num_yaw_bins

    def anchor(self, slab: int, category: int, yaw_bin: int) -> OrientedBox3D:
        return OrientedBox3D(
            self.centers[slab], self.mean_sizes[category], float(self.yaw_bins[yaw_bin])
        )

    def anchor_array(self, slab: int, category: int, yaw_bin: int) -> np.ndarray:
        return np.concatenate(
            [self.centers[slab], self.mean_sizes[category], [self.yaw_bins[yaw_bin]]]
        )


def build_anchors(seq, categories, mean_sizes, num_yaw_bins: int) -> AnchorSet:
    """Anchors at the slab centroids of a frustum sequence.

    The sequence passed here is the one matching the network's output
    resolution; mean_sizes maps category name -> (l, w, h).
    """
    cats = tuple(categories)
    sizes = np.array([mean_sizes[c] for c in cats], dtype=float).reshape(len(cats), 3)
    if np.any(sizes <= 0.0):
        raise ValueError("anchor mean sizes must be positive")
    return AnchorSet(
        centers=np.asarray(seq.centroids, dtype=float),
        mean_sizes=sizes,
        yaw_bins=yaw_bin_centers(num_yaw_bins),
        categories=cats,
    )
