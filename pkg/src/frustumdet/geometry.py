"""Frustum frames and sliding-slab sequences.

A 2D proposal defines a viewing ray; the frustum frame rotates the camera
frame so that ray becomes +z (the frustum axis). Slabs are depth intervals
[t*s, t*s + u) along that axis; points are grouped into every slab whose
interval contains their depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .boxes import OrientedBox3D, wrap_angle
from .errors import ConfigError


@dataclass(frozen=True, eq=False)
class FrustumFrame:
    """Rigid map p -> rotation @ (p - axis_origin) taking the proposal ray to +z.

    rotation is pitch-after-azimuth about the camera axes; azimuth is the
    yaw component, which is what box yaws shift by under the frame.
    """

    rotation: np.ndarray
    axis_origin: np.ndarray
    azimuth: float
    elevation: float

    def to_frame(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.axis_origin) @ self.rotation.T

    def from_frame(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation + self.axis_origin

    def box_to_frame(self, box: OrientedBox3D) -> OrientedBox3D:
        """Transform a box into the frame; yaw shifts by the azimuth only."""
        center = self.rotation @ (box.center - self.axis_origin)
        return OrientedBox3D(center, box.sizes, wrap_angle(box.yaw - self.azimuth))

    def box_from_frame(self, box: OrientedBox3D) -> OrientedBox3D:
        center = self.rotation.T @ box.center + self.axis_origin
        return OrientedBox3D(center, box.sizes, wrap_angle(box.yaw + self.azimuth))


def _ray_through_pixel(proposal, calib) -> np.ndarray:
    """Unit direction of the camera ray through the proposal's pixel center."""
    u0 = 0.5 * (proposal.image_box[0] + proposal.image_box[2])
    v0 = 0.5 * (proposal.image_box[1] + proposal.image_box[3])
    m = calib.projection[:, :3]
    ray = np.linalg.solve(m, np.array([u0, v0, 1.0]))
    if ray[2] < 0:
        ray = -ray
    return ray / np.linalg.norm(ray)


def frustum_frame(proposal, calib) -> FrustumFrame:
    """Frame whose +z axis is the ray through the proposal's pixel center.

    The rotation composes azimuth about y then elevation about x, the
    minimal pair aligning the ray with +z; the origin is the camera center.
    """
    ray = _ray_through_pixel(proposal, calib)
    azimuth = math.atan2(ray[0], ray[2])
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    r_yaw = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
    rho = math.hypot(ray[0], ray[2])
    elevation = math.atan2(-ray[1], rho)
    ce, se = math.cos(elevation), math.sin(elevation)
    r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, ce, se], [0.0, -se, ce]])
    return FrustumFrame(
        rotation=r_pitch @ r_yaw,
        axis_origin=np.zeros(3),
        azimuth=azimuth,
        elevation=elevation,
    )


def normalized_box_frame(box: OrientedBox3D) -> FrustumFrame:
    """Frame centered on a box with the box's length axis as the +z axis.

    Used by the refinement stage: inside this frame the box itself sits at
    the origin with yaw -pi/2.
    """
    azimuth = box.yaw + 0.5 * np.pi
    ca, sa = math.cos(azimuth), math.sin(azimuth)
    rotation = np.array([[ca, 0.0, -sa], [0.0, 1.0, 0.0], [sa, 0.0, ca]])
    return FrustumFrame(
        rotation=rotation,
        axis_origin=np.array(box.center, dtype=float),
        azimuth=azimuth,
        elevation=0.0,
    )


@dataclass(frozen=True, eq=False)
class FrustumSequence:
    """L slabs of height u slid with stride s over [depth_min, depth_max).

    points are frustum-frame coordinates of the sampled set; groups[t] holds
    indices of the points whose depth lies in slab t's interval. With u = 2s
    every interior point belongs to exactly two slabs.
    """

    frame: FrustumFrame
    stride: float
    height: float
    depth_min: float
    depth_max: float
    points: np.ndarray
    groups: tuple = field(repr=False)

    @property
    def num_slabs(self) -> int:
        return len(self.groups)

    @property
    def centroids(self) -> np.ndarray:
        """Per-slab anchor centers (0, 0, t*s + u/2) relative to depth_min."""
        L = self.num_slabs
        out = np.zeros((L, 3))
        out[:, 2] = self.depth_min + np.arange(L) * self.stride + 0.5 * self.height
        return out


def num_slabs(depth_min: float, depth_max: float, stride: float) -> int:
    return int(math.ceil((depth_max - depth_min) / stride))


def build_sequence(
    points: np.ndarray,
    frame: FrustumFrame,
    resolution: tuple[float, float],
    depth_range: tuple[float, float],
) -> FrustumSequence:
    """Group frustum-frame points into sliding slabs.

    points are camera-frame coordinates (already restricted to the proposal);
    resolution is (stride s, height u) with u >= s > 0. Slab t covers
    [depth_min + t*s, depth_min + t*s + u); points outside
    [depth_min, depth_max) are left ungrouped.
    """
    s, u = float(resolution[0]), float(resolution[1])
    depth_min, depth_max = float(depth_range[0]), float(depth_range[1])
    if s <= 0.0 or u < s:
        raise ConfigError(f"need height >= stride > 0, got stride={s}, height={u}")
    if depth_max <= depth_min:
        raise ConfigError(f"empty depth range [{depth_min}, {depth_max})")
    pts = frame.to_frame(np.asarray(points, dtype=float).reshape(-1, 3))
    L = num_slabs(depth_min, depth_max, s)
    groups: list[list[int]] = [[] for _ in range(L)]
    z = pts[:, 2]
    in_range = (z >= depth_min) & (z < depth_max)
    rel = z - depth_min
    for i in np.flatnonzero(in_range):
        t_hi = int(math.floor(rel[i] / s))
        t_lo = int(math.floor((rel[i] - u) / s)) + 1
        for t in range(max(0, t_lo), min(L - 1, t_hi) + 1):
            groups[t].append(int(i))
    return FrustumSequence(
        frame=frame,
        stride=s,
        height=u,
        depth_min=depth_min,
        depth_max=depth_max,
        points=pts,
        groups=tuple(np.array(g, dtype=np.int64) for g in groups),
    )


def multi_resolution_sequences(
    points: np.ndarray,
    frame: FrustumFrame,
    resolutions,
    depth_range: tuple[float, float],
) -> list[FrustumSequence]:
    """One sequence per (s, u) pair; each resolution must double the previous."""
    resolutions = [(float(s), float(u)) for s, u in resolutions]
    if not resolutions:
        raise ConfigError("need at least one resolution")
    for (s0, u0), (s1, u1) in zip(resolutions, resolutions[1:]):
        if not (math.isclose(s1, 2.0 * s0) and math.isclose(u1, 2.0 * u0)):
            raise ConfigError(
                f"resolutions must double: ({s0}, {u0}) followed by ({s1}, {u1})"
            )
    return [build_sequence(points, frame, res, depth_range) for res in resolutions]


def anchor_sequence(
    base: FrustumSequence, out_length: int
) -> FrustumSequence:
    """The sequence at the network's output resolution, for anchor placement.

    Scales the base (s, u) by L / out_length; the result's centroids are the
    anchor centers.
    """
    L = base.num_slabs
    if L % out_length != 0:
        raise ConfigError(f"output length {out_length} does not divide slab count {L}")
    ratio = L // out_length
    return build_sequence(
        base.frame.from_frame(base.points),
        base.frame,
        (base.stride * ratio, base.height * ratio),
        (base.depth_min, base.depth_max),
    )
