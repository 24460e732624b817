"""Target assignment and training losses.

Positions are anchors at slab centroids on the frustum axis. A position
is positive when its center falls inside a half-shrunken ground-truth
box, ignored inside the full box but outside the core, negative
otherwise. Only the matched category/yaw-bin slice of the regression
output is supervised; all other slices get exactly zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import (
    _CORNER_SIGNS,
    AnchorSet,
    OrientedBox3D,
    corners,
    encode,
    points_in_box,
    wrap_angle,
)

MIN_DECODED_SIZE = 1e-3
_NORM_EPS = 1e-24


@dataclass(eq=False)
class AssignmentResult:
    class_target: np.ndarray  # (L,) int64; 0 background, 1 + category index
    ignore: np.ndarray  # (L,) bool, excluded from the classification loss
    gt_index: np.ndarray  # (L,) int64, -1 off positives
    yaw_bin: np.ndarray  # (L,) int64, -1 off positives
    offsets: np.ndarray  # (L, 7) encoded against the matched anchor

    @property
    def positive_mask(self) -> np.ndarray:
        return self.class_target > 0

    @property
    def num_positive(self) -> int:
        return int(self.positive_mask.sum())


def assign_targets(anchors: AnchorSet, gts) -> AssignmentResult:
    """Match anchor positions to ground-truth boxes in the frustum frame."""
    num = anchors.num_slabs
    cat_index = {c: i for i, c in enumerate(anchors.categories)}
    class_target = np.zeros(num, dtype=np.int64)
    ignore = np.zeros(num, dtype=bool)
    gt_index = np.full(num, -1, dtype=np.int64)
    yaw_bin = np.full(num, -1, dtype=np.int64)
    offsets = np.zeros((num, 7))
    candidates = [[] for _ in range(num)]
    for gi, lab in enumerate(gts):
        inside_full = points_in_box(lab.box, anchors.centers)
        trainable = lab.difficulty != "ignore" and lab.category in cat_index
        if not trainable:
            ignore |= inside_full
            continue
        inside_core = points_in_box(lab.box, anchors.centers, shrink=0.5)
        ignore |= inside_full & ~inside_core
        for t in np.flatnonzero(inside_core):
            candidates[t].append(gi)
    for t, cands in enumerate(candidates):
        if not cands:
            continue
        dists = [np.linalg.norm(anchors.centers[t] - gts[gi].box.center) for gi in cands]
        gi = cands[int(np.argmin(dists))]
        lab = gts[gi]
        k = cat_index[lab.category]
        bin_errs = np.abs(wrap_angle(lab.box.yaw - anchors.yaw_bins))
        b = int(np.argmin(bin_errs))
        anchor_box = anchors.anchor(t, k, b)
        class_target[t] = 1 + k
        gt_index[t] = gi
        yaw_bin[t] = b
        offsets[t] = encode(lab.box, anchor_box).as_array()
    ignore &= class_target == 0
    return AssignmentResult(class_target, ignore, gt_index, yaw_bin, offsets)


def focal_loss(
    class_logits: T.Tensor,
    assignment: AssignmentResult,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> T.Tensor:
    """Focal classification loss over non-ignored positions.

    Normalized by the positive count (at least 1). gamma=0 and alpha=0.5
    reduce it to half the plain cross entropy.
    """
    num, num_classes = class_logits.shape
    log_probs = T.log_softmax(class_logits, axis=1)
    target = assignment.class_target
    flat = np.arange(num) * num_classes + target
    logp_t = T.take_flat(log_probs, flat)
    p_t = T.exp(logp_t)
    alpha_t = np.where(target > 0, alpha, 1.0 - alpha)
    term = T.mul(logp_t, alpha_t)
    if gamma != 0.0:
        term = T.mul(term, T.pow_scalar(T.sub(1.0, p_t), gamma))
    keep = (~assignment.ignore).astype(float)
    total = T.sum_(T.mul(term, keep))
    return T.mul(total, -1.0 / max(1, assignment.num_positive))


def _offset_columns(anchors: AnchorSet, cat: np.ndarray, bins: np.ndarray):
    base = (cat * anchors.num_yaw_bins + bins) * 7
    return base[:, None] + np.arange(7)[None, :]


def gather_matched_offsets(
    reg_offsets: T.Tensor, assignment: AssignmentResult, anchors: AnchorSet
) -> T.Tensor:
    """(P, 7) predicted offsets for the matched category and yaw bin."""
    pos = np.flatnonzero(assignment.positive_mask)
    width = reg_offsets.shape[1]
    cats = assignment.class_target[pos] - 1
    bins = assignment.yaw_bin[pos]
    cols = _offset_columns(anchors, cats, bins)
    flat = (pos[:, None] * width + cols).ravel()
    return T.reshape(T.take_flat(reg_offsets, flat), (pos.size, 7))


def regression_loss(
    reg_offsets: T.Tensor, assignment: AssignmentResult, anchors: AnchorSet
) -> T.Tensor:
    """Center error as a Euclidean norm, smooth L1 on sizes and yaw."""
    pos = np.flatnonzero(assignment.positive_mask)
    if pos.size == 0:
        return T.Tensor(0.0)
    pred = gather_matched_offsets(reg_offsets, assignment, anchors)
    target = assignment.offsets[pos]
    err = T.sub(pred, target)
    center_sq = T.sum_(T.square(err[:, 0:3]), axis=1)
    center_term = T.sqrt(T.add(center_sq, _NORM_EPS))
    rest_term = T.sum_(T.smooth_l1(err[:, 3:7]), axis=1)
    total = T.sum_(T.add(center_term, rest_term))
    return T.mul(total, 1.0 / max(1, assignment.num_positive))


def _rotation_t(yaw: T.Tensor) -> T.Tensor:
    """Transposed yaw rotation assembled from scalar tensors, shape (3, 3)."""
    c, s = T.cos(yaw), T.sin(yaw)
    zero, one = T.Tensor([0.0]), T.Tensor([1.0])
    rows = [
        T.concat([c, zero, T.mul(s, -1.0)]),
        T.concat([zero, one, zero]),
        T.concat([s, zero, c]),
    ]
    return T.reshape(T.concat(rows), (3, 3))


def decoded_corners(pred7: T.Tensor, anchor_box: OrientedBox3D) -> T.Tensor:
    """Differentiable corners of the box decoded from predicted offsets."""
    center = T.add(pred7[0:3], anchor_box.center)
    sizes = T.mul(anchor_box.sizes, T.add(pred7[3:6], 1.0))
    sizes = T.where(sizes.data < MIN_DECODED_SIZE, T.Tensor(np.full(3, MIN_DECODED_SIZE)), sizes)
    yaw = T.add(pred7[6:7], anchor_box.yaw)
    # Corner signs use (l, h, w) column order; sizes are stored (l, w, h).
    half = T.mul(sizes[np.array([0, 2, 1])], 0.5)
    local = T.mul(_CORNER_SIGNS, T.reshape(half, (1, 3)))
    world = T.matmul(local, _rotation_t(yaw))
    return T.add(world, T.reshape(center, (1, 3)))


def corner_loss(
    reg_offsets: T.Tensor,
    assignment: AssignmentResult,
    anchors: AnchorSet,
    gts,
) -> T.Tensor:
    """Smooth L1 on corner distances, taking the better of the ground-truth
    box and its 180-degree flip, averaged over the 8 corners."""
    pos = np.flatnonzero(assignment.positive_mask)
    if pos.size == 0:
        return T.Tensor(0.0)
    pred = gather_matched_offsets(reg_offsets, assignment, anchors)
    terms = []
    for row, t in enumerate(pos):
        lab = gts[assignment.gt_index[t]]
        k = assignment.class_target[t] - 1
        b = assignment.yaw_bin[t]
        anchor_box = anchors.anchor(t, k, b)
        pc = decoded_corners(pred[row], anchor_box)
        gt_c = corners(lab.box)
        flip_c = corners(
            OrientedBox3D(lab.box.center, lab.box.sizes, lab.box.yaw + np.pi)
        )
        losses = []
        for target in (gt_c, flip_c):
            d_sq = T.sum_(T.square(T.sub(pc, target)), axis=1)
            dist = T.sqrt(T.add(d_sq, _NORM_EPS))
            losses.append(T.mul(T.sum_(T.smooth_l1(dist)), 1.0 / 8.0))
        terms.append(T.minimum(losses[0], losses[1]))
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    return T.mul(total, 1.0 / max(1, assignment.num_positive))


def total_loss(
    class_logits: T.Tensor,
    reg_offsets: T.Tensor,
    assignment: AssignmentResult,
    anchors: AnchorSet,
    gts,
    reg_weight: float = 1.0,
    corner_weight: float = 10.0,
    gamma: float = 2.0,
    alpha: float = 0.25,
) -> tuple:
    """Weighted sum; returns (scalar tensor, float components dict)."""
    cls = focal_loss(class_logits, assignment, gamma, alpha)
    reg = regression_loss(reg_offsets, assignment, anchors)
    crn = corner_loss(reg_offsets, assignment, anchors, gts)
    total = T.add(cls, T.add(T.mul(reg, reg_weight), T.mul(crn, corner_weight)))
    parts = {
        "focal": cls.item(),
        "reg": reg.item(),
        "corner": crn.item(),
        "total": total.item(),
    }
    return total, parts
