"""Slab-sequence detection network.

A shared per-point encoder turns each slab's points into one feature
vector (max pool over the slab), giving an L x d map per frustum. A 1D
conv backbone downsamples it, re-injects coarser-resolution point maps
through kernel-1 merge convs, and deconvs every merged stage back to a
common length so their channels concatenate. Two kernel-1 convs emit
per-position class logits and box offsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import (
    BatchNorm,
    Conv1d,
    ConvBnRelu,
    Deconv1d,
    DeconvBnRelu,
    LinearBnRelu,
    Module,
)


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0

    def out_length(self, length: int) -> int:
        span = length + 2 * self.padding - self.kernel
        if span < 0:
            raise ConfigError(f"conv {self} cannot consume length {length}")
        return span // self.stride + 1


@dataclass(frozen=True)
class DeconvSpec:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1

    def out_length(self, length: int) -> int:
        return (length - 1) * self.stride + self.kernel


@dataclass(frozen=True)
class FcnConfig:
    """Backbone layout; every length/width implied here is validated."""

    name: str
    num_slabs: int
    point_hidden: tuple
    point_widths: tuple
    blocks: tuple
    deconvs: tuple
    merges: tuple
    out_length: int

    def __post_init__(self):
        object.__setattr__(self, "point_hidden", tuple(self.point_hidden))
        object.__setattr__(self, "point_widths", tuple(self.point_widths))
        object.__setattr__(self, "blocks", tuple(tuple(b) for b in self.blocks))
        object.__setattr__(self, "deconvs", tuple(self.deconvs))
        object.__setattr__(self, "merges", tuple(self.merges))
        num_blocks = len(self.blocks)
        if num_blocks < 2:
            raise ConfigError("need at least two conv blocks")
        if len(self.point_widths) != num_blocks:
            raise ConfigError("one point-map width per resolution level required")
        if len(self.deconvs) != num_blocks - 1 or len(self.merges) != num_blocks - 1:
            raise ConfigError("every block after the first needs a merge and a deconv")
        lengths = self.block_lengths()
        width = self.point_widths[0]
        for bi, block in enumerate(self.blocks):
            for spec in block:
                if spec.in_channels != width:
                    raise ConfigError(
                        f"block {bi + 1} expects {spec.in_channels} channels, gets {width}"
                    )
                width = spec.out_channels
            if bi > 0:
                merge = self.merges[bi - 1]
                expected_in = width + self.point_widths[bi]
                if merge.kernel != 1 or merge.stride != 1 or merge.padding != 0:
                    raise ConfigError("merge convs must be kernel 1, stride 1")
                if merge.in_channels != expected_in:
                    raise ConfigError(
                        f"merge {bi + 1} input {merge.in_channels} != {expected_in}"
                    )
                width = merge.out_channels
                deconv = self.deconvs[bi - 1]
                if deconv.in_channels != width:
                    raise ConfigError(
                        f"deconv {bi + 1} input {deconv.in_channels} != {width}"
                    )
                if deconv.out_length(lengths[bi]) != self.out_length:
                    raise ConfigError(
                        f"deconv {bi + 1} maps length {lengths[bi]} to "
                        f"{deconv.out_length(lengths[bi])}, expected {self.out_length}"
                    )

    def block_lengths(self) -> tuple:
        """Map length after each block, starting from num_slabs."""
        lengths = []
        length = self.num_slabs
        for bi, block in enumerate(self.blocks):
            for spec in block:
                length = spec.out_length(length)
            lengths.append(length)
            if bi > 0 and self.num_slabs % length != 0:
                raise ConfigError(
                    f"block {bi + 1} length {length} does not divide {self.num_slabs}"
                )
        return tuple(lengths)

    @property
    def num_levels(self) -> int:
        return len(self.blocks)

    def level_lengths(self) -> tuple:
        """Point-map length per resolution level: base, then each merged block."""
        return (self.num_slabs,) + self.block_lengths()[1:]

    @property
    def fused_channels(self) -> int:
        return sum(d.out_channels for d in self.deconvs)


def standard_config(
    name: str,
    num_slabs: int,
    block_widths: tuple,
    point_hidden: tuple = (64, 128),
    deconv_channels: int = 256,
) -> FcnConfig:
    """Stride-2 pyramid: one conv in block 1, two per later block, merges on all
    downsampled blocks, every deconv landing on block 2's length."""
    num_blocks = len(block_widths)
    if num_slabs % (2 ** (num_blocks - 1)) != 0:
        raise ConfigError(
            f"{num_slabs} slabs not divisible by 2**{num_blocks - 1}"
        )
    point_widths = tuple(block_widths)
    blocks = [(ConvSpec(3, block_widths[0], block_widths[0], 1, 1),)]
    for prev, width in zip(block_widths[:-1], block_widths[1:]):
        blocks.append(
            (ConvSpec(3, prev, width, 2, 1), ConvSpec(3, width, width, 1, 1))
        )
    out_length = num_slabs // 2
    merges, deconvs = [], []
    for bi, width in enumerate(block_widths[1:], start=2):
        merges.append(ConvSpec(1, width + point_widths[bi - 1], width, 1, 0))
        factor = 2 ** (bi - 2)
        deconvs.append(DeconvSpec(factor, width, deconv_channels, factor))
    return FcnConfig(
        name,
        num_slabs,
        tuple(point_hidden),
        point_widths,
        tuple(blocks),
        tuple(deconvs),
        tuple(merges),
        out_length,
    )


def kitti_config() -> FcnConfig:
    return standard_config("kitti-4block", 280, (128, 128, 256, 512))


def sunrgbd_config() -> FcnConfig:
    return standard_config("sunrgbd-5block", 80, (64, 128, 256, 512, 512))


def toy_config(num_slabs: int = 32, width: int = 64) -> FcnConfig:
    return standard_config(
        "toy",
        num_slabs,
        (width, width, width),
        point_hidden=(8, width),
        deconv_channels=width,
    )


PRESETS = {
    "kitti-4block": kitti_config,
    "sunrgbd-5block": sunrgbd_config,
    "toy": toy_config,
}


def preset_config(name: str) -> FcnConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name]()


def config_to_dict(cfg: FcnConfig) -> dict:
    from dataclasses import astuple

    return {
        "name": cfg.name,
        "num_slabs": cfg.num_slabs,
        "point_hidden": list(cfg.point_hidden),
        "point_widths": list(cfg.point_widths),
        "blocks": [[list(astuple(s)) for s in b] for b in cfg.blocks],
        "deconvs": [list(astuple(s)) for s in cfg.deconvs],
        "merges": [list(astuple(s)) for s in cfg.merges],
        "out_length": cfg.out_length,
    }


def config_from_dict(d: dict) -> FcnConfig:
    return FcnConfig(
        d["name"],
        d["num_slabs"],
        tuple(d["point_hidden"]),
        tuple(d["point_widths"]),
        tuple(tuple(ConvSpec(*s) for s in b) for b in d["blocks"]),
        tuple(DeconvSpec(*s) for s in d["deconvs"]),
        tuple(ConvSpec(*s) for s in d["merges"]),
        d["out_length"],
    )


def stage_shapes(cfg: FcnConfig, num_categories: int, num_yaw_bins: int) -> dict:
    """Expected (length, channels) of every intermediate map for one frustum."""
    shapes = {}
    lengths = cfg.block_lengths()
    levels = cfg.level_lengths()
    for li, (length, width) in enumerate(zip(levels, cfg.point_widths)):
        shapes[f"point_map_{li}"] = (length, width)
    for bi, block in enumerate(cfg.blocks, start=1):
        shapes[f"block{bi}"] = (lengths[bi - 1], block[-1].out_channels)
    for bi, merge in enumerate(cfg.merges, start=2):
        shapes[f"merge{bi}"] = (lengths[bi - 1], merge.out_channels)
    for bi, deconv in enumerate(cfg.deconvs, start=2):
        shapes[f"deconv{bi}"] = (cfg.out_length, deconv.out_channels)
    shapes["fused"] = (cfg.out_length, cfg.fused_channels)
    shapes["class_logits"] = (cfg.out_length, num_categories + 1)
    shapes["reg_offsets"] = (cfg.out_length, num_categories * num_yaw_bins * 7)
    return shapes


@dataclass
class LevelInput:
    """Flattened point rows for one resolution level of a whole batch.

    `segment_ids` holds batch_index * level_length + slab_index per row,
    sorted ascending; empty slabs simply have no rows.
    """

    features: np.ndarray
    segment_ids: np.ndarray
    batch: int
    length: int

    @property
    def num_segments(self) -> int:
        return self.batch * self.length


def batch_inputs(per_sample_sequences: list) -> list:
    """Build per-level inputs from each sample's multi-resolution sequences."""
    if not per_sample_sequences:
        raise ShapeError("empty batch")
    num_levels = len(per_sample_sequences[0])
    batch = len(per_sample_sequences)
    levels = []
    for li in range(num_levels):
        length = per_sample_sequences[0][li].num_slabs
        rows, ids = [], []
        for b, seqs in enumerate(per_sample_sequences):
            seq = seqs[li]
            if seq.num_slabs != length:
                raise ShapeError("mismatched slab counts inside one batch")
            centroids = seq.centroids
            for t, idx in enumerate(seq.groups):
                if idx.size:
                    # Coordinates are taken relative to the slab's axis midpoint;
                    # position along the frustum is carried by the map index.
                    rows.append(seq.points[idx] - centroids[t])
                    ids.append(np.full(idx.size, b * length + t, dtype=np.int64))
        feats = np.vstack(rows) if rows else np.zeros((0, 3))
        seg = np.concatenate(ids) if ids else np.zeros(0, dtype=np.int64)
        levels.append(LevelInput(feats, seg, batch, length))
    return levels


class PointNetEncoder(Module):
    """Shared per-point MLP then per-slab max pool."""

    def __init__(self, hidden: tuple, out_width: int, rng):
        super().__init__()
        widths = [3] + list(hidden) + [out_width]
        self.layers = [
            self.add_child(f"fc{i}", LinearBnRelu(a, b, rng))
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))
        ]

    def __call__(self, level: LevelInput) -> T.Tensor:
        x = T.Tensor(level.features)
        if level.features.shape[0] == 0:
            return T.Tensor(np.zeros((level.num_segments, self.layers[-1].linear.out_features)))
        for layer in self.layers:
            x = layer(x)
        return T.segment_max(x, level.segment_ids, level.num_segments)


def _per_sample(fn, x: T.Tensor, batch: int) -> T.Tensor:
    """Apply a length-local op to each sample of a (batch*L, C) map."""
    length = x.shape[0] // batch
    outs = [fn(x[b * length : (b + 1) * length]) for b in range(batch)]
    return T.concat(outs, axis=0)


class FrustumNetwork(Module):
    """Full detector: encoders, conv pyramid, merges, deconvs, header."""

    def __init__(
        self,
        cfg: FcnConfig,
        num_categories: int,
        num_yaw_bins: int,
        rng: np.random.Generator,
    ):
        super().__init__()
        self.cfg = cfg
        self.num_categories = num_categories
        self.num_yaw_bins = num_yaw_bins
        self.encoders = [
            self.add_child(
                f"encoder{li}", PointNetEncoder(cfg.point_hidden, width, rng)
            )
            for li, width in enumerate(cfg.point_widths)
        ]
        self.blocks = []
        for bi, block in enumerate(cfg.blocks, start=1):
            stages = [
                self.add_child(
                    f"block{bi}_{si}",
                    ConvBnRelu(s.in_channels, s.out_channels, s.kernel, s.stride, s.padding, rng),
                )
                for si, s in enumerate(block)
            ]
            self.blocks.append(stages)
        self.merges = [
            self.add_child(
                f"merge{bi}",
                ConvBnRelu(m.in_channels, m.out_channels, 1, 1, 0, rng),
            )
            for bi, m in enumerate(cfg.merges, start=2)
        ]
        self.deconvs = [
            self.add_child(
                f"deconv{bi}",
                DeconvBnRelu(d.in_channels, d.out_channels, d.kernel, d.stride, rng),
            )
            for bi, d in enumerate(cfg.deconvs, start=2)
        ]
        self.class_conv = self.add_child(
            "class_conv", Conv1d(cfg.fused_channels, num_categories + 1, 1, 1, 0, rng)
        )
        self.reg_conv = self.add_child(
            "reg_conv",
            Conv1d(cfg.fused_channels, num_categories * num_yaw_bins * 7, 1, 1, 0, rng),
        )
        self.recorded_shapes = {}

    def _record(self, name: str, x: T.Tensor, batch: int):
        self.recorded_shapes[name] = (x.shape[0] // batch, x.shape[1])

    def __call__(self, levels: list) -> tuple:
        """Returns (class_logits, reg_offsets), each (batch * out_length, C)."""
        cfg = self.cfg
        if len(levels) != cfg.num_levels:
            raise ShapeError(
                f"{len(levels)} resolution levels given, config wants {cfg.num_levels}"
            )
        batch = levels[0].batch
        expected = cfg.level_lengths()
        for li, (level, length) in enumerate(zip(levels, expected)):
            if level.length != length or level.batch != batch:
                raise ShapeError(
                    f"level {li} has length {level.length}, config wants {length}"
                )
        self.recorded_shapes = {}
        point_maps = [enc(level) for enc, level in zip(self.encoders, levels)]
        for li, pm in enumerate(point_maps):
            self._record(f"point_map_{li}", pm, batch)
        x = point_maps[0]
        upsampled = []
        for bi, stages in enumerate(self.blocks, start=1):
            for stage in stages:
                x = _per_sample(stage.conv, x, batch)
                x = T.relu(stage.bn(x))
            self._record(f"block{bi}", x, batch)
            if bi >= 2:
                merged_in = T.concat([x, point_maps[bi - 1]], axis=1)
                x = self.merges[bi - 2](merged_in)
                self._record(f"merge{bi}", x, batch)
                layer = self.deconvs[bi - 2]
                up = _per_sample(layer.deconv, x, batch)
                up = T.relu(layer.bn(up))
                self._record(f"deconv{bi}", up, batch)
                upsampled.append(up)
        fused = T.concat(upsampled, axis=1)
        self._record("fused", fused, batch)
        class_logits = self.class_conv(fused)
        reg_offsets = self.reg_conv(fused)
        self._record("class_logits", class_logits, batch)
        self._record("reg_offsets", reg_offsets, batch)
        return class_logits, reg_offsets


def dependency_interval(cfg: FcnConfig, out_pos: int) -> tuple:
    """Base-resolution slab interval that can influence one output position.

    Conservative superset from interval arithmetic over every path through
    the backbone, including the coarser point maps injected at merges.
    """
    lengths = cfg.block_lengths()
    lo_hi = {}
    span = (out_pos, out_pos)
    for bi in range(len(cfg.blocks), 1, -1):
        d = cfg.deconvs[bi - 2]
        lo = (span[0] - d.kernel + 1 + d.stride - 1) // d.stride
        hi = span[1] // d.stride
        lo_hi[bi] = (max(0, lo), min(lengths[bi - 1] - 1, hi))
    base_lo, base_hi = cfg.num_slabs, -1

    def widen(interval, block_index):
        lo, hi = interval
        for spec in reversed(cfg.blocks[block_index - 1]):
            lo = lo * spec.stride - spec.padding
            hi = hi * spec.stride - spec.padding + spec.kernel - 1
        return lo, hi

    for bi, interval in lo_hi.items():
        factor = cfg.num_slabs // lengths[bi - 1]
        # Coarser point map injected at this block's merge: level slab t
        # covers base slabs [t*factor, (t+2)*factor - 1] because slabs
        # overlap by one stride.
        base_lo = min(base_lo, interval[0] * factor - 1)
        base_hi = max(base_hi, (interval[1] + 2) * factor - 1)
        span_b = interval
        for bj in range(bi, 0, -1):
            span_b = widen(span_b, bj)
        base_lo = min(base_lo, span_b[0] - 1)
        base_hi = max(base_hi, span_b[1] + 1)
    return max(0, base_lo), min(cfg.num_slabs - 1, base_hi)
