"""Backbone config validation, batched forward shapes, invariances."""

import numpy as np
import pytest

from frustumdet import tensor as T
from frustumdet.boxes import OrientedBox3D
from frustumdet.errors import ConfigError, ShapeError
from frustumdet.geometry import multi_resolution_sequences, normalized_box_frame
from frustumdet.net import (
    ConvSpec,
    DeconvSpec,
    FrustumNetwork,
    LevelInput,
    batch_inputs,
    config_from_dict,
    config_to_dict,
    dependency_interval,
    kitti_config,
    preset_config,
    stage_shapes,
    standard_config,
    sunrgbd_config,
    toy_config,
)


def _identity_frame():
    return normalized_box_frame(OrientedBox3D((0, 0, 0), (1, 1, 1), -np.pi / 2))


def _toy_sequences(rng, num_points=60, depth=(0.0, 8.0)):
    frame = _identity_frame()
    local = np.column_stack(
        [
            rng.normal(0, 0.5, num_points),
            rng.normal(0, 0.5, num_points),
            rng.uniform(depth[0], depth[1] - 1e-6, num_points),
        ]
    )
    res = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
    return multi_resolution_sequences(frame.from_frame(local), frame, res, depth)


def test_kitti_config_lengths_and_channels():
    cfg = kitti_config()
    assert cfg.num_slabs == 280
    assert cfg.block_lengths() == (280, 140, 70, 35)
    assert cfg.out_length == 140
    assert cfg.fused_channels == 768
    assert cfg.level_lengths() == (280, 140, 70, 35)
    assert cfg.point_widths == (128, 128, 256, 512)


def test_sunrgbd_config_lengths_and_channels():
    cfg = sunrgbd_config()
    assert cfg.num_slabs == 80
    assert cfg.block_lengths() == (80, 40, 20, 10, 5)
    assert cfg.out_length == 40
    assert cfg.fused_channels == 1024


def test_preset_lookup():
    assert preset_config("toy").name == "toy"
    with pytest.raises(ConfigError, match="kitti-4block"):
        preset_config("nope")


def test_config_dict_roundtrip():
    for cfg in (kitti_config(), sunrgbd_config(), toy_config()):
        assert config_from_dict(config_to_dict(cfg)) == cfg


def test_standard_config_validation():
    with pytest.raises(ConfigError):
        standard_config("bad", 30, (16, 16, 16))  # 30 % 4 != 0
    with pytest.raises(ConfigError):
        standard_config("bad", 8, (16,))


def test_invalid_merge_and_deconv_rejected():
    cfg = toy_config(8)
    d = config_to_dict(cfg)
    d["merges"][0][0] = 3  # kernel must be 1
    with pytest.raises(ConfigError):
        config_from_dict(d)
    d = config_to_dict(cfg)
    d["deconvs"][0][3] = 4  # lands on the wrong length
    with pytest.raises(ConfigError):
        config_from_dict(d)
    d = config_to_dict(cfg)
    d["blocks"][1][0][1] = 99  # channel chain broken
    with pytest.raises(ConfigError):
        config_from_dict(d)


def test_stage_shapes_matches_recorded_forward(rng):
    cfg = toy_config(8)
    net = FrustumNetwork(cfg, 2, 3, rng)
    net.eval()
    seqs = [_toy_sequences(rng), _toy_sequences(rng)]
    levels = batch_inputs(seqs)
    cls, reg = net(levels)
    want = stage_shapes(cfg, 2, 3)
    assert net.recorded_shapes == want
    assert cls.shape == (2 * cfg.out_length, 3)
    assert reg.shape == (2 * cfg.out_length, 2 * 3 * 7)


def test_batch_inputs_layout(rng):
    seqs = [_toy_sequences(rng, num_points=20), _toy_sequences(rng, num_points=30)]
    levels = batch_inputs(seqs)
    assert len(levels) == 3
    for li, level in enumerate(levels):
        assert level.batch == 2
        assert np.all(np.diff(level.segment_ids) >= 0)
        assert level.segment_ids.max() < level.num_segments
        # every row is offset by its slab centroid
        seq = seqs[0][li]
        for t, idx in enumerate(seq.groups):
            if idx.size:
                rows = level.features[np.flatnonzero(level.segment_ids == t)]
                np.testing.assert_allclose(
                    rows, seq.points[idx] - seq.centroids[t], atol=1e-12
                )
                break


def test_batch_inputs_validation(rng):
    with pytest.raises(ShapeError):
        batch_inputs([])
    a = _toy_sequences(rng)
    b = _toy_sequences(rng, depth=(0.0, 16.0))
    with pytest.raises(ShapeError):
        batch_inputs([a, b])


def test_forward_level_count_checked(rng):
    cfg = toy_config(8)
    net = FrustumNetwork(cfg, 1, 2, rng)
    seqs = _toy_sequences(rng)
    levels = batch_inputs([seqs])
    with pytest.raises(ShapeError):
        net(levels[:2])


def test_point_permutation_is_bitwise_invariant(rng):
    cfg = toy_config(8)
    net = FrustumNetwork(cfg, 1, 2, rng)
    net.eval()
    frame = _identity_frame()
    local = np.column_stack(
        [rng.normal(0, 0.5, 40), rng.normal(0, 0.5, 40), rng.uniform(0, 8, 40)]
    )
    res = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
    perm = rng.permutation(40)
    with T.no_grad():
        base = net(batch_inputs([multi_resolution_sequences(frame.from_frame(local), frame, res, (0.0, 8.0))]))
        shuf = net(batch_inputs([multi_resolution_sequences(frame.from_frame(local[perm]), frame, res, (0.0, 8.0))]))
    assert np.array_equal(base[0].data, shuf[0].data)
    assert np.array_equal(base[1].data, shuf[1].data)


def test_empty_slabs_give_zero_point_rows(rng):
    cfg = toy_config(8)
    net = FrustumNetwork(cfg, 1, 2, rng)
    net.eval()
    # points only in the first two base slabs; everything later stays empty
    frame = _identity_frame()
    local = np.column_stack(
        [rng.normal(0, 0.3, 25), rng.normal(0, 0.3, 25), rng.uniform(0.0, 1.8, 25)]
    )
    res = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
    seqs = multi_resolution_sequences(frame.from_frame(local), frame, res, (0.0, 8.0))
    levels = batch_inputs([seqs])
    enc0 = net.encoders[0]
    with T.no_grad():
        pm = enc0(levels[0])
    occupied = {t for t, g in enumerate(seqs[0].groups) if g.size}
    for t in range(8):
        if t not in occupied:
            np.testing.assert_array_equal(pm.data[t], 0.0)
        else:
            assert np.any(pm.data[t] != 0.0)


def test_all_empty_input_forward(rng):
    cfg = toy_config(8)
    net = FrustumNetwork(cfg, 1, 2, rng)
    net.eval()
    frame = _identity_frame()
    res = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
    seqs = multi_resolution_sequences(np.zeros((0, 3)), frame, res, (0.0, 8.0))
    with T.no_grad():
        cls, reg = net(batch_inputs([seqs]))
    assert cls.shape == (4, 2)
    assert np.all(np.isfinite(cls.data)) and np.all(np.isfinite(reg.data))


def test_dependency_interval_localizes_influence(rng):
    cfg = toy_config(16)
    net = FrustumNetwork(cfg, 1, 2, rng)
    net.eval()
    frame = _identity_frame()
    res = [(1.0, 2.0), (2.0, 4.0), (4.0, 8.0)]
    lo, hi = dependency_interval(cfg, 0)
    assert lo == 0 and hi < 13  # must leave room for an uninvolved point
    base = np.column_stack(
        [rng.normal(0, 0.3, 30), rng.normal(0, 0.3, 30), rng.uniform(0, hi + 0.999, 30)]
    )
    # slabs overlap by one stride, so depth >= hi + 2 avoids slab hi entirely
    far = np.array([[0.1, 0.1, hi + 2.25]])
    with T.no_grad():
        a = net(batch_inputs([multi_resolution_sequences(frame.from_frame(base), frame, res, (0.0, 16.0))]))
        b = net(
            batch_inputs(
                [
                    multi_resolution_sequences(
                        frame.from_frame(np.vstack([base, far])), frame, res, (0.0, 16.0)
                    )
                ]
            )
        )
    np.testing.assert_array_equal(a[0].data[0], b[0].data[0])
    assert not np.array_equal(a[0].data, b[0].data)
