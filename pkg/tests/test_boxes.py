"""Box geometry, codec, IoU, and NMS against independent references."""

import numpy as np
import pytest

from frustumdet.boxes import (
    BoxOffsets,
    OrientedBox3D,
    box_from_corners,
    corners,
    corners_bev,
    decode,
    decode_batch,
    encode,
    intersection_area_bev,
    iou_3d,
    iou_bev,
    nms_rotated,
    points_in_box,
    wrap_angle,
    yaw_bin_centers,
    yaw_rotation,
)
from conftest import random_box
from oracles import mc_iou_3d, mc_iou_bev, nms_reference, point_in_box_oracle


def test_wrap_angle_range_and_identity(rng):
    a = rng.uniform(-20, 20, 1000)
    w = wrap_angle(a)
    assert np.all((w >= -np.pi) & (w < np.pi))
    np.testing.assert_allclose(np.sin(w), np.sin(a), atol=1e-12)
    np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
    assert wrap_angle(np.pi) == -np.pi
    assert wrap_angle(-np.pi) == -np.pi


def test_yaw_rotation_orthonormal(rng):
    for yaw in rng.uniform(-np.pi, np.pi, 20):
        R = yaw_rotation(yaw)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)
        np.testing.assert_allclose(R @ [0, 1, 0], [0, 1, 0], atol=1e-12)


def test_corners_roundtrip(rng):
    for _ in range(50):
        box = random_box(rng)
        rec = box_from_corners(corners(box))
        np.testing.assert_allclose(rec.center, box.center, atol=1e-9)
        np.testing.assert_allclose(rec.sizes, box.sizes, atol=1e-9)
        assert wrap_angle(rec.yaw - box.yaw) == pytest.approx(0.0, abs=1e-9)


def test_corners_edge_lengths():
    box = OrientedBox3D((1.0, 2.0, 3.0), (4.0, 2.0, 1.5), 0.7)
    c = corners(box)
    assert np.linalg.norm(c[0] - c[1]) == pytest.approx(box.l)
    assert np.linalg.norm(c[1] - c[2]) == pytest.approx(box.w)
    assert np.linalg.norm(c[0] - c[4]) == pytest.approx(box.h)
    np.testing.assert_allclose(c.mean(axis=0), box.center, atol=1e-12)


def test_corners_bev_counterclockwise(rng):
    for _ in range(20):
        poly = corners_bev(random_box(rng))
        x, z = poly[:, 0], poly[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))
        assert signed > 0


def test_points_in_box_matches_oracle(rng):
    for _ in range(30):
        box = random_box(rng)
        pts = rng.uniform(-6, 6, (200, 3))
        for shrink in (1.0, 0.5):
            got = points_in_box(box, pts, shrink=shrink)
            want = [point_in_box_oracle(box, p, shrink) for p in pts]
            assert got.tolist() == want


def test_points_in_box_faces_inclusive():
    box = OrientedBox3D((0, 0, 0), (2.0, 2.0, 2.0), 0.0)
    on_faces = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]], float)
    assert points_in_box(box, on_faces).all()
    assert not points_in_box(box, np.array([[1.0001, 0, 0]])).any()


def test_encode_decode_roundtrip(rng):
    for _ in range(200):
        gt = random_box(rng)
        anchor = random_box(rng)
        box, clamped = decode(encode(gt, anchor), anchor)
        assert not clamped
        np.testing.assert_allclose(box.center, gt.center, atol=1e-12)
        np.testing.assert_allclose(box.sizes, gt.sizes, atol=1e-12)
        assert wrap_angle(box.yaw - gt.yaw) == pytest.approx(0.0, abs=1e-12)


def test_decode_batch_matches_scalar(rng):
    offs = rng.normal(0, 0.5, (64, 7))
    anchors = np.stack([random_box(rng).as_array() for _ in range(64)])
    out, clamp = decode_batch(offs, anchors)
    for i in range(64):
        box, c = decode(BoxOffsets.from_array(offs[i]), OrientedBox3D.from_array(anchors[i]))
        np.testing.assert_allclose(out[i], box.as_array(), atol=1e-12)
        assert clamp[i] == c


def test_decode_clamps_tiny_sizes():
    anchor = OrientedBox3D((0, 0, 0), (1.0, 1.0, 1.0), 0.0)
    off = BoxOffsets(0, 0, 0, -1.5, 0, 0, 0)
    box, clamped = decode(off, anchor)
    assert clamped
    assert np.all(box.sizes > 0)


def test_iou_axis_aligned_exact_cases():
    unit = OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0)
    shifted = OrientedBox3D((0.5, 0, 0), (1, 1, 1), 0.0)
    assert iou_3d(unit, unit) == pytest.approx(1.0)
    assert iou_3d(unit, shifted) == pytest.approx(1.0 / 3.0)
    assert iou_bev(unit, shifted) == pytest.approx(1.0 / 3.0)
    far = OrientedBox3D((5, 0, 0), (1, 1, 1), 0.0)
    assert iou_3d(unit, far) == 0.0
    inner = OrientedBox3D((0, 0, 0), (0.5, 0.5, 0.5), 0.0)
    assert iou_3d(unit, inner) == pytest.approx(0.125)
    assert iou_bev(unit, inner) == pytest.approx(0.25)
    above = OrientedBox3D((0, 0.5, 0), (1, 1, 1), 0.0)
    assert iou_3d(unit, above) == pytest.approx(1.0 / 3.0)
    square_quarter = OrientedBox3D((0, 0, 0), (1, 1, 1), np.pi / 2)
    assert iou_3d(unit, square_quarter) == pytest.approx(1.0)
    rect = OrientedBox3D((0, 0, 0), (2, 1, 1), 0.0)
    rect_pi = OrientedBox3D((0, 0, 0), (2, 1, 1), np.pi)
    assert iou_3d(rect, rect_pi) == pytest.approx(1.0)


def test_iou_rotated_analytic_square():
    # unit square vs itself at 45 degrees: intersection is a regular octagon
    a = OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0)
    b = OrientedBox3D((0, 0, 0), (1, 1, 1), np.pi / 4)
    inter = 2.0 * (np.sqrt(2.0) - 1.0)
    assert intersection_area_bev(a, b) == pytest.approx(inter, abs=1e-12)
    assert iou_bev(a, b) == pytest.approx(inter / (2.0 - inter), abs=1e-12)


def test_iou_monte_carlo_spot_checks(rng):
    for _ in range(25):
        a = random_box(rng, center_range=1.0, size_range=(0.8, 3.0))
        b = random_box(rng, center_range=1.0, size_range=(0.8, 3.0))
        assert iou_bev(a, b) == pytest.approx(mc_iou_bev(a, b, 200_000, rng), abs=0.02)
        assert iou_3d(a, b) == pytest.approx(mc_iou_3d(a, b, 200_000, rng), abs=0.02)


def test_iou_symmetry(rng):
    for _ in range(30):
        a = random_box(rng, center_range=1.5)
        b = random_box(rng, center_range=1.5)
        assert iou_bev(a, b) == pytest.approx(iou_bev(b, a), abs=1e-9)
        assert iou_3d(a, b) == pytest.approx(iou_3d(b, a), abs=1e-9)


def test_iou_degenerate_box_is_zero():
    a = OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0)
    flat = OrientedBox3D((0, 0, 0), (1e-9, 1e-9, 1.0), 0.0)
    assert iou_bev(a, flat) == 0.0
    assert iou_3d(a, flat) == 0.0


def test_nms_matches_reference(rng):
    for _ in range(40):
        n = int(rng.integers(1, 25))
        boxes = [random_box(rng, center_range=3.0, size_range=(0.8, 2.5)) for _ in range(n)]
        scores = rng.uniform(0, 1, n)
        for thr in (0.1, 0.3, 0.5):
            got = nms_rotated(list(zip(boxes, scores)), thr)
            want = nms_reference(boxes, scores, thr, iou_3d)
            assert got == want


def test_nms_tie_breaks_by_input_order():
    box = OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0)
    near = OrientedBox3D((0.05, 0, 0), (1, 1, 1), 0.0)
    kept = nms_rotated([(box, 0.7), (near, 0.7)], 0.3)
    assert kept == [0]


def test_nms_rejects_nan_scores():
    box = OrientedBox3D((0, 0, 0), (1, 1, 1), 0.0)
    with pytest.raises(ValueError):
        nms_rotated([(box, float("nan"))], 0.5)


def test_yaw_bin_centers_layout():
    c4 = yaw_bin_centers(4)
    np.testing.assert_allclose(c4, [-3 * np.pi / 4, -np.pi / 4, np.pi / 4, 3 * np.pi / 4])
    c12 = yaw_bin_centers(12)
    assert len(c12) == 12
    np.testing.assert_allclose(np.diff(c12), np.pi / 6)
    assert np.all((c12 >= -np.pi) & (c12 < np.pi))
    with pytest.raises(ValueError):
        yaw_bin_centers(0)


def test_box_helpers():
    box = OrientedBox3D((1, 2, 3), (4, 2, 1), 0.3)
    t = box.translated((1, 1, 1))
    np.testing.assert_allclose(t.center, (2, 3, 4))
    s = box.scaled(2.0)
    np.testing.assert_allclose(s.sizes, (8, 4, 2))
    np.testing.assert_allclose(s.center, box.center)
    assert box.volume == pytest.approx(8.0)
    rec = OrientedBox3D.from_array(box.as_array())
    np.testing.assert_allclose(rec.as_array(), box.as_array())
