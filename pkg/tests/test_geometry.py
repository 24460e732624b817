"""Frustum frames, slab grouping, and anchor sequences."""

import numpy as np
import pytest

from frustumdet.boxes import OrientedBox3D, wrap_angle
from frustumdet.data.sampling import points_in_proposal
from frustumdet.data.types import CameraCalib, PointCloud, RegionProposal2D
from frustumdet.errors import ConfigError
from frustumdet.geometry import (
    anchor_sequence,
    build_sequence,
    frustum_frame,
    multi_resolution_sequences,
    normalized_box_frame,
    num_slabs,
)
from conftest import random_box
from oracles import in_proposal_oracle, slab_groups_oracle


def _random_proposal(rng, calib=None):
    u0 = rng.uniform(100, 1000)
    v0 = rng.uniform(50, 300)
    return RegionProposal2D(
        (u0, v0, u0 + rng.uniform(20, 200), v0 + rng.uniform(20, 60)), "Car", 0.9
    )


def test_frame_ray_maps_to_z_axis(rng):
    calib = CameraCalib.simple(721.0, 609.5, 172.8)
    for _ in range(25):
        prop = _random_proposal(rng)
        frame = frustum_frame(prop, calib)
        u0, v0 = prop.pixel_center
        ray = np.linalg.solve(calib.projection[:, :3], [u0, v0, 1.0])
        ray /= np.linalg.norm(ray)
        np.testing.assert_allclose(frame.rotation @ ray, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(frame.rotation @ frame.rotation.T, np.eye(3), atol=1e-12)
        # points on the ray land on the frame's z axis at their range
        for depth in (2.0, 17.5):
            local = frame.to_frame(ray * depth)
            np.testing.assert_allclose(local, [0, 0, depth], atol=1e-9)


def test_frame_round_trips(rng):
    calib = CameraCalib.simple(500.0, 320.0, 240.0)
    frame = frustum_frame(_random_proposal(rng), calib)
    pts = rng.normal(0, 5, (100, 3))
    np.testing.assert_allclose(frame.from_frame(frame.to_frame(pts)), pts, atol=1e-12)
    for _ in range(10):
        box = random_box(rng)
        back = frame.box_from_frame(frame.box_to_frame(box))
        np.testing.assert_allclose(back.center, box.center, atol=1e-12)
        assert wrap_angle(back.yaw - box.yaw) == pytest.approx(0.0, abs=1e-12)


def test_frame_yaw_shifts_by_azimuth(rng):
    calib = CameraCalib.simple(721.0, 609.5, 172.8)
    frame = frustum_frame(_random_proposal(rng), calib)
    box = OrientedBox3D((3.0, 1.0, 20.0), (4, 2, 1.5), 0.4)
    moved = frame.box_to_frame(box)
    assert wrap_angle(moved.yaw - (box.yaw - frame.azimuth)) == pytest.approx(0.0)


def test_centered_pixel_frame_is_identity():
    calib = CameraCalib.simple(700.0, 400.0, 200.0)
    prop = RegionProposal2D((390, 190, 410, 210), "Car", 1.0)
    frame = frustum_frame(prop, calib)
    assert frame.azimuth == pytest.approx(0.0)
    assert frame.elevation == pytest.approx(0.0)
    np.testing.assert_allclose(frame.rotation, np.eye(3), atol=1e-12)


def test_normalized_box_frame_centers_box(rng):
    for _ in range(20):
        box = random_box(rng)
        frame = normalized_box_frame(box)
        local = frame.box_to_frame(box)
        np.testing.assert_allclose(local.center, 0.0, atol=1e-12)
        assert wrap_angle(local.yaw + 0.5 * np.pi) == pytest.approx(0.0, abs=1e-12)
        # length axis of the box points along +z in this frame
        tip = frame.to_frame(
            box.center + 0.5 * box.l * np.array([np.sin(frame.azimuth), 0, np.cos(frame.azimuth)])
        )
        np.testing.assert_allclose(tip, [0, 0, 0.5 * box.l], atol=1e-9)


def test_num_slabs_ceil():
    assert num_slabs(0.0, 70.0, 0.25) == 280
    assert num_slabs(0.0, 70.4, 0.25) == 282
    assert num_slabs(4.0, 12.0, 0.25) == 32


def test_build_sequence_matches_oracle(rng):
    calib = CameraCalib.simple(600.0, 512.0, 160.0)
    for _ in range(20):
        prop = _random_proposal(rng)
        frame = frustum_frame(prop, calib)
        depth_min, depth_max = 2.0, 10.0
        s = 0.5
        u = 1.0
        local = np.column_stack(
            [
                rng.normal(0, 1, 60),
                rng.normal(0, 1, 60),
                rng.uniform(depth_min - 1, depth_max + 1, 60),
            ]
        )
        seq = build_sequence(frame.from_frame(local), frame, (s, u), (depth_min, depth_max))
        L = num_slabs(depth_min, depth_max, s)
        assert seq.num_slabs == L
        want = slab_groups_oracle(local[:, 2], s, u, depth_min, depth_max, L)
        got = [g.tolist() for g in seq.groups]
        assert got == want


def test_build_sequence_interior_points_in_two_slabs(rng):
    frame = normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), -np.pi / 2))
    # keep clear of the first stride and the range end, where coverage is single
    z = rng.uniform(1.55, 7.45, 500)
    pts = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    seq = build_sequence(frame.from_frame(pts), frame, (0.5, 1.0), (1.0, 8.0))
    counts = np.zeros(len(z), dtype=int)
    for g in seq.groups:
        counts[g] += 1
    assert np.all(counts == 2)


def test_build_sequence_validation():
    frame = normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0))
    pts = np.zeros((1, 3))
    with pytest.raises(ConfigError):
        build_sequence(pts, frame, (0.0, 1.0), (0.0, 4.0))
    with pytest.raises(ConfigError):
        build_sequence(pts, frame, (1.0, 0.5), (0.0, 4.0))
    with pytest.raises(ConfigError):
        build_sequence(pts, frame, (0.5, 1.0), (4.0, 4.0))


def test_sequence_centroids():
    frame = normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0))
    seq = build_sequence(np.zeros((0, 3)), frame, (0.5, 1.0), (2.0, 6.0))
    cents = seq.centroids
    assert cents.shape == (8, 3)
    np.testing.assert_allclose(cents[:, 0], 0.0)
    np.testing.assert_allclose(cents[:, 1], 0.0)
    np.testing.assert_allclose(cents[:, 2], 2.5 + 0.5 * np.arange(8))


def test_multi_resolution_doubling(rng):
    frame = normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0))
    pts = frame.from_frame(np.column_stack([np.zeros(30), np.zeros(30), rng.uniform(0, 8, 30)]))
    seqs = multi_resolution_sequences(
        pts, frame, [(0.25, 0.5), (0.5, 1.0), (1.0, 2.0)], (0.0, 8.0)
    )
    assert [s.num_slabs for s in seqs] == [32, 16, 8]
    with pytest.raises(ConfigError):
        multi_resolution_sequences(pts, frame, [(0.25, 0.5), (0.6, 1.2)], (0.0, 8.0))
    with pytest.raises(ConfigError):
        multi_resolution_sequences(pts, frame, [], (0.0, 8.0))


def test_anchor_sequence_scaling(rng):
    frame = normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0))
    pts = frame.from_frame(np.column_stack([np.zeros(40), np.zeros(40), rng.uniform(0, 8, 40)]))
    base = build_sequence(pts, frame, (0.25, 0.5), (0.0, 8.0))
    anch = anchor_sequence(base, 16)
    assert anch.num_slabs == 16
    assert anch.stride == pytest.approx(0.5)
    assert anch.height == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        anchor_sequence(base, 7)


def test_points_in_proposal_matches_oracle(rng):
    calib = CameraCalib.simple(650.0, 600.0, 180.0)
    for _ in range(20):
        prop = _random_proposal(rng)
        pts = np.column_stack(
            [rng.uniform(-20, 20, 300), rng.uniform(-5, 5, 300), rng.uniform(-5, 60, 300)]
        )
        cloud = PointCloud(pts, frame="camera_rect")
        idx = points_in_proposal(cloud, calib, prop)
        want = [i for i, p in enumerate(pts) if in_proposal_oracle(calib.projection, prop.image_box, p)]
        assert idx.tolist() == want


def test_points_in_proposal_requires_camera_frame(rng):
    calib = CameraCalib.simple(650.0, 600.0, 180.0)
    prop = _random_proposal(rng)
    cloud = PointCloud(np.zeros((3, 3)), frame="sensor")
    with pytest.raises(ValueError):
        points_in_proposal(cloud, calib, prop)
