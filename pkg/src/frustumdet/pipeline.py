"""End-to-end orchestration: training, inference, refinement, detection IO.

Stage one runs per 2D proposal: frustum frame, fixed-size point sample,
multi-resolution slab sequences, network forward, per-position decoding,
then NMS and score fusion across the scene. The refinement stage repeats
the same machinery inside each detection's 1.2x-expanded box, normalized
so the box's length axis becomes the frustum axis.
"""

from __future__ import annotations

import os
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .boxes import (
    AnchorSet,
    BoxOffsets,
    OrientedBox3D,
    corners,
    decode,
    nms_rotated,
    points_in_box,
    yaw_bin_centers,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import default_config
from .data import (
    AugmentConfig,
    LabeledBox,
    RegionProposal2D,
    augment_proposal,
    points_in_proposal,
    sample_fixed,
    sample_point_augmentation,
)
from .errors import ConfigError, MalformedFileError, MissingFileError
from .geometry import (
    anchor_sequence,
    frustum_frame,
    multi_resolution_sequences,
    normalized_box_frame,
    num_slabs,
)
from .losses import assign_targets, total_loss
from .net import (
    FrustumNetwork,
    batch_inputs,
    config_from_dict,
    config_to_dict,
    preset_config,
)
from .nn import Adam

# Ground-truth jitter used when bootstrapping refinement training:
# fraction of each size for center/size noise, radians for yaw.
REFINE_JITTER_CENTER = 0.1
REFINE_JITTER_SIZE = 0.1
REFINE_JITTER_YAW = 0.1

_STRIDE_NUDGE = 1.0 + 1e-12


@dataclass(eq=False)
class DetectionResult:
    """One oriented box in the camera frame with its three scores."""

    frame_id: str
    category: str
    box: OrientedBox3D
    score_3d: float
    score_2d: float
    score_fused: float = None
    proposal_index: int = -1

    def __post_init__(self):
        if self.score_fused is None:
            self.score_fused = self.score_2d + self.score_3d


# -- geometry wiring -------------------------------------------------------


def _doubling_resolutions(stride: float, extent: float, levels: int) -> list:
    return [(stride * 2**i, extent * 2**i) for i in range(levels)]


def stage_one_geometry(cfg: dict, net_cfg) -> tuple:
    """(resolutions, depth_range) for stage one; validates slab counts."""
    s, u = cfg["slab_stride"], cfg["slab_extent"]
    depth_range = (cfg["depth_min"], cfg["depth_max"])
    L = num_slabs(depth_range[0], depth_range[1], s)
    if L != net_cfg.num_slabs:
        raise ConfigError(
            f"depth range {depth_range} at stride {s} gives {L} slabs, "
            f"preset {net_cfg.name!r} wants {net_cfg.num_slabs}"
        )
    return _doubling_resolutions(s, u, net_cfg.num_levels), depth_range


def refine_geometry(box_length: float, expand: float, net_cfg) -> tuple:
    """Depth range spans the expanded box length, centered on the box."""
    half = 0.5 * expand * box_length
    stride = (2.0 * half / net_cfg.num_slabs) * _STRIDE_NUDGE
    resolutions = _doubling_resolutions(stride, 2.0 * stride, net_cfg.num_levels)
    return resolutions, (-half, half)


def _mean_size_matrix(cfg: dict) -> np.ndarray:
    cats = cfg["categories"]
    missing = [c for c in cats if c not in cfg["mean_sizes"]]
    if missing:
        raise ConfigError(f"mean_sizes missing categories: {missing}")
    return np.array([cfg["mean_sizes"][c] for c in cats], dtype=float)


def _proposal_rng(seed: int, frame_id: str, proposal: RegionProposal2D):
    """Stream keyed by proposal content, so identical proposals sample alike."""
    payload = np.array(
        [*proposal.image_box, proposal.score_2d], dtype="<f8"
    ).tobytes() + proposal.category.encode("utf-8")
    return np.random.default_rng(
        [seed, zlib.crc32(frame_id.encode("utf-8")), zlib.crc32(payload)]
    )


def _detection_rng(seed: int, frame_id: str, det_index: int):
    return np.random.default_rng(
        [seed, zlib.crc32(frame_id.encode("utf-8")), 0x5EF1, det_index]
    )


# -- frustum preparation ---------------------------------------------------


@dataclass(eq=False)
class PreparedFrustum:
    sequences: list
    anchors: AnchorSet
    frame: object
    gts: list
    assignment: object


def _frustum_gts(scene, frame) -> list:
    if not scene.labels:
        return []
    return [
        LabeledBox(frame.box_to_frame(lab.box), lab.category, lab.difficulty)
        for lab in scene.labels
    ]


def prepare_frustum(
    scene,
    proposal,
    cfg: dict,
    net_cfg,
    rng,
    augment: bool = False,
    with_targets: bool = False,
):
    """Build the multi-resolution slab input for one proposal.

    Returns None when no point projects into the (possibly jittered)
    proposal. Augmentation jitters the 2D box before the frustum is cut
    and mirrors/shifts the frustum points afterwards, with labels moved
    consistently.
    """
    aug_cfg = AugmentConfig(
        cfg["jitter_frac"], cfg["scale_frac"], cfg["flip_prob"], cfg["shift_max"]
    )
    if augment:
        proposal = augment_proposal(proposal, rng, aug_cfg)
    idx = points_in_proposal(scene.cloud, scene.calib, proposal)
    if idx.size == 0:
        return None
    sampled = sample_fixed(idx, cfg["point_samples"], rng)
    frame = frustum_frame(proposal, scene.calib)
    pts = frame.to_frame(scene.cloud.points[sampled])
    gts = _frustum_gts(scene, frame) if with_targets else []
    if augment:
        aug = sample_point_augmentation(rng, aug_cfg)
        pts = aug.apply_points(pts)
        gts = [
            LabeledBox(aug.apply_box(g.box), g.category, g.difficulty) for g in gts
        ]
    resolutions, depth_range = stage_one_geometry(cfg, net_cfg)
    seqs = multi_resolution_sequences(
        frame.from_frame(pts), frame, resolutions, depth_range
    )
    anchors = AnchorSet(
        centers=anchor_sequence(seqs[0], net_cfg.out_length).centroids,
        mean_sizes=_mean_size_matrix(cfg),
        yaw_bins=yaw_bin_centers(cfg["num_yaw_bins"]),
        categories=tuple(cfg["categories"]),
    )
    assignment = assign_targets(anchors, gts) if with_targets else None
    return PreparedFrustum(seqs, anchors, frame, gts, assignment)


def prepare_refine_frustum(
    scene,
    box: OrientedBox3D,
    cfg: dict,
    net_cfg,
    rng,
    with_targets: bool = False,
):
    """Crop, normalize and slab-split one detection's neighborhood.

    Returns None when fewer than refine_min_points points fall inside the
    expanded box. Anchor sizes are the input box's own sizes for every
    category slot, so zero offsets decode back to the input box.
    """
    expanded = box.scaled(cfg["refine_expand"])
    idx = np.flatnonzero(points_in_box(expanded, scene.cloud.points))
    if idx.size < cfg["refine_min_points"]:
        return None
    sampled = sample_fixed(idx, cfg["refine_samples"], rng)
    nframe = normalized_box_frame(box)
    resolutions, depth_range = refine_geometry(box.l, cfg["refine_expand"], net_cfg)
    seqs = multi_resolution_sequences(
        scene.cloud.points[sampled], nframe, resolutions, depth_range
    )
    sizes = np.tile(box.sizes, (len(cfg["categories"]), 1))
    anchors = AnchorSet(
        centers=anchor_sequence(seqs[0], net_cfg.out_length).centroids,
        mean_sizes=sizes,
        yaw_bins=yaw_bin_centers(cfg["refine_yaw_bins"]),
        categories=tuple(cfg["categories"]),
    )
    gts = _frustum_gts(scene, nframe) if with_targets else []
    assignment = assign_targets(anchors, gts) if with_targets else None
    return PreparedFrustum(seqs, anchors, nframe, gts, assignment)


# -- model construction and checkpoints ------------------------------------


def build_model(cfg: dict, stage: str = "detect", rng=None) -> FrustumNetwork:
    if rng is None:
        rng = np.random.default_rng(cfg["seed"])
    if stage == "detect":
        net_cfg = preset_config(cfg["preset"])
        bins = cfg["num_yaw_bins"]
        stage_one_geometry(cfg, net_cfg)
    elif stage == "refine":
        net_cfg = preset_config(cfg["refine_preset"])
        bins = cfg["refine_yaw_bins"]
    else:
        raise ConfigError(f"unknown stage {stage!r}")
    model = FrustumNetwork(net_cfg, len(cfg["categories"]), bins, rng)
    model.stage = stage
    return model


def save_model(path, model: FrustumNetwork, cfg: dict):
    meta = {
        "stage": getattr(model, "stage", "detect"),
        "net": config_to_dict(model.cfg),
        "categories": list(cfg["categories"]),
        "num_yaw_bins": model.num_yaw_bins,
        "config": cfg,
    }
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple:
    """Returns (model in eval mode, saved config dict)."""
    tensors, meta = load_checkpoint(path)
    for key in ("net", "categories", "num_yaw_bins", "stage"):
        if key not in meta:
            raise MalformedFileError(f"{path}: checkpoint metadata missing {key!r}")
    net_cfg = config_from_dict(meta["net"])
    model = FrustumNetwork(
        net_cfg, len(meta["categories"]), meta["num_yaw_bins"], np.random.default_rng(0)
    )
    model.load_state_dict(tensors)
    model.stage = meta["stage"]
    model.eval()
    saved_cfg = meta.get("config") or default_config()
    return model, saved_cfg


# -- training --------------------------------------------------------------


def _jittered_gt_box(lab, rng) -> OrientedBox3D:
    box = lab.box
    center = box.center + rng.uniform(-1, 1, 3) * REFINE_JITTER_CENTER * box.sizes
    sizes = box.sizes * (1.0 + rng.uniform(-1, 1, 3) * REFINE_JITTER_SIZE)
    yaw = box.yaw + rng.uniform(-REFINE_JITTER_YAW, REFINE_JITTER_YAW)
    return OrientedBox3D(center, sizes, yaw)


def _training_items(scenes, cfg, stage) -> list:
    cats = set(cfg["categories"])
    items = []
    for si, scene in enumerate(scenes):
        if scene.labels is None:
            continue
        if stage == "detect":
            for pi in range(len(scene.proposals)):
                items.append((si, pi))
        else:
            for li, lab in enumerate(scene.labels):
                if lab.difficulty != "ignore" and lab.category in cats:
                    items.append((si, li))
    return items


def _prepare_item(item, scenes, cfg, net_cfg, rng, stage):
    si, ref = item
    scene = scenes[si]
    if stage == "detect":
        return prepare_frustum(
            scene,
            scene.proposals[ref],
            cfg,
            net_cfg,
            rng,
            augment=bool(cfg["augment"]),
            with_targets=True,
        )
    box = _jittered_gt_box(scene.labels[ref], rng)
    return prepare_refine_frustum(scene, box, cfg, net_cfg, rng, with_targets=True)


def train(scenes, cfg: dict, stage: str = "detect", log=None):
    """Train a stage; returns (model, per-epoch history list).

    Deterministic for a fixed seed on one thread. Batches in which every
    item came up empty are skipped with a warning line. cfg["max_steps"]
    (when nonzero) stops after that many optimizer steps.
    """
    rng = np.random.default_rng(cfg["seed"])
    model = build_model(cfg, stage, rng)
    opt = Adam(
        model.parameters(),
        lr=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"],
    )
    items = _training_items(scenes, cfg, stage)
    history = []
    step = 0
    max_steps = int(cfg["max_steps"])
    out_len = model.cfg.out_length
    for epoch in range(int(cfg["epochs"])):
        if max_steps and step >= max_steps:
            break
        decays = sum(1 for m in cfg["lr_decay_epochs"] if epoch >= m)
        opt.lr = cfg["learning_rate"] * cfg["lr_decay"] ** decays
        order = rng.permutation(len(items))
        sums = {"focal": 0.0, "reg": 0.0, "corner": 0.0, "total": 0.0}
        batches = 0
        for start in range(0, len(order), int(cfg["batch_size"])):
            if max_steps and step >= max_steps:
                break
            chunk = order[start : start + int(cfg["batch_size"])]
            prepared = []
            for i in chunk:
                p = _prepare_item(items[int(i)], scenes, cfg, model.cfg, rng, stage)
                if p is not None:
                    prepared.append(p)
            if not prepared:
                if log:
                    log(f"epoch {epoch + 1}: skipped an empty batch")
                continue
            model.train()
            levels = batch_inputs([p.sequences for p in prepared])
            cls, reg = model(levels)
            terms = []
            for b, p in enumerate(prepared):
                rows = slice(b * out_len, (b + 1) * out_len)
                term, parts = total_loss(
                    cls[rows],
                    reg[rows],
                    p.assignment,
                    p.anchors,
                    p.gts,
                    reg_weight=cfg["reg_weight"],
                    corner_weight=cfg["corner_weight"],
                    gamma=cfg["focal_gamma"],
                    alpha=cfg["focal_alpha"],
                )
                terms.append(term)
                for k in sums:
                    sums[k] += parts[k]
            loss = terms[0]
            for t in terms[1:]:
                loss = T.add(loss, t)
            loss = T.mul(loss, 1.0 / len(terms))
            model.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            batches += len(prepared)
        record = {"epoch": epoch, "lr": opt.lr, "steps": step}
        for k in sums:
            record[k] = sums[k] / max(1, batches)
        history.append(record)
        if log:
            log(
                f"epoch {epoch + 1}/{cfg['epochs']} lr {opt.lr:g} "
                f"loss {record['total']:.4f} (focal {record['focal']:.4f} "
                f"reg {record['reg']:.4f} corner {record['corner']:.4f})"
            )
    model.eval()
    return model, history


# -- inference -------------------------------------------------------------


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _decode_candidates(
    frame_id, prep, cls_rows, reg_rows, proposal_index, score_2d, threshold
):
    """All (position, yaw bin) detections above the foreground threshold."""
    probs = _softmax_rows(cls_rows)
    best_k = np.argmax(probs[:, 1:], axis=1)
    fg_prob = probs[np.arange(probs.shape[0]), 1 + best_k]
    anchors = prep.anchors
    n_bins = anchors.num_yaw_bins
    dets = []
    for t in np.flatnonzero(fg_prob > threshold):
        k = int(best_k[t])
        base = (k * n_bins) * 7
        for b in range(n_bins):
            cols = slice(base + b * 7, base + (b + 1) * 7)
            offsets = BoxOffsets.from_array(reg_rows[t, cols])
            box_fr, _ = decode(offsets, anchors.anchor(int(t), k, b))
            box_cam = prep.frame.box_from_frame(box_fr)
            dets.append(
                DetectionResult(
                    frame_id,
                    anchors.categories[k],
                    box_cam,
                    float(fg_prob[t]),
                    float(score_2d),
                    proposal_index=proposal_index,
                )
            )
    return dets


def nms_detections(dets, iou_threshold: float) -> list:
    """Per-category greedy NMS ranked by score_3d; keeps emission order ties."""
    out = []
    seen = []
    for d in dets:
        if d.category not in seen:
            seen.append(d.category)
    for cat in seen:
        idx = [i for i, d in enumerate(dets) if d.category == cat]
        kept = nms_rotated([(dets[i].box, dets[i].score_3d) for i in idx], iou_threshold)
        out.extend(dets[idx[k]] for k in kept)
    return out


def infer_scene(model: FrustumNetwork, cfg: dict, scene) -> list:
    """Stage-one detections for one scene: decode, pool, NMS, fuse scores."""
    model.eval()
    net_cfg = model.cfg
    cats = set(cfg["categories"])
    prepared = []
    for pi, prop in enumerate(scene.proposals):
        if prop.category not in cats:
            continue
        rng = _proposal_rng(cfg["seed"], scene.frame_id, prop)
        prep = prepare_frustum(scene, prop, cfg, net_cfg, rng)
        if prep is not None:
            prepared.append((pi, prop, prep))
    if not prepared:
        return []
    levels = batch_inputs([prep.sequences for _, _, prep in prepared])
    with T.no_grad():
        cls, reg = model(levels)
    out_len = net_cfg.out_length
    dets = []
    for b, (pi, prop, prep) in enumerate(prepared):
        rows = slice(b * out_len, (b + 1) * out_len)
        dets.extend(
            _decode_candidates(
                scene.frame_id,
                prep,
                cls.data[rows],
                reg.data[rows],
                pi,
                prop.score_2d,
                cfg["fg_threshold"],
            )
        )
    return nms_detections(dets, cfg["nms_iou"])


def refine_detection(model: FrustumNetwork, cfg: dict, scene, det, rng):
    """Returns (possibly refined detection, flag). Keeps the input when the
    crop is too sparse or nothing clears the foreground threshold."""
    prep = prepare_refine_frustum(scene, det.box, cfg, model.cfg, rng)
    if prep is None:
        return det, False
    levels = batch_inputs([prep.sequences])
    with T.no_grad():
        cls, reg = model(levels)
    cands = _decode_candidates(
        det.frame_id,
        prep,
        cls.data,
        reg.data,
        det.proposal_index,
        det.score_2d,
        cfg["fg_threshold"],
    )
    if not cands:
        return det, False
    order = np.argsort([-c.score_3d for c in cands], kind="stable")
    best = cands[int(order[0])]
    return best, True


def refine_detections(model: FrustumNetwork, cfg: dict, scene, dets) -> tuple:
    """Refine each detection independently; output stays aligned with input.

    Returns (list of detections, list of refined flags).
    """
    model.eval()
    out, flags = [], []
    for di, det in enumerate(dets):
        rng = _detection_rng(cfg["seed"], scene.frame_id, di)
        refined, flag = refine_detection(model, cfg, scene, det, rng)
        out.append(refined)
        flags.append(flag)
    return out, flags


def refine_scene(model: FrustumNetwork, cfg: dict, scene, dets) -> list:
    """Full refinement pass: per-detection refinement, then NMS again."""
    refined, _ = refine_detections(model, cfg, scene, dets)
    return nms_detections(refined, cfg["nms_iou"])


# -- detection files -------------------------------------------------------


def _fmt(x: float) -> str:
    return "%.12g" % float(x)


def save_detections(path, dets):
    """One `frame_id category x y z l w h yaw score_3d score_2d score_fused`
    line per detection."""
    with open(path, "w") as fh:
        for d in dets:
            fields = [d.frame_id, d.category]
            fields += [_fmt(v) for v in d.box.center]
            fields += [_fmt(v) for v in d.box.sizes]
            fields += [_fmt(d.box.yaw), _fmt(d.score_3d), _fmt(d.score_2d), _fmt(d.score_fused)]
            fh.write(" ".join(fields) + "\n")


def load_detections(path) -> dict:
    """Detections per frame id, in file order."""
    if not os.path.exists(path):
        raise MissingFileError(f"no such file: {path}")
    per_frame = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise MalformedFileError(
                    f"{path}:{lineno}: {len(tokens)} fields, expected 12"
                )
            frame_id, category = tokens[0], tokens[1]
            try:
                vals = [float(t) for t in tokens[2:]]
            except ValueError as exc:
                raise MalformedFileError(f"{path}:{lineno}: bad number") from exc
            det = DetectionResult(
                frame_id,
                category,
                OrientedBox3D(vals[0:3], vals[3:6], vals[6]),
                score_3d=vals[7],
                score_2d=vals[8],
                score_fused=vals[9],
            )
            per_frame.setdefault(frame_id, []).append(det)
    return per_frame


# -- viewer export ---------------------------------------------------------

_BOX_EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
]


def export_ply(path, scene, dets):
    """ASCII point + edge export: gray cloud, red detection wireframes."""
    cloud = scene.cloud.points
    verts = [(p[0], p[1], p[2], 180, 180, 180) for p in cloud]
    edges = []
    for d in dets:
        base = len(verts)
        for c in corners(d.box):
            verts.append((c[0], c[1], c[2], 255, 40, 40))
        edges.extend((base + a, base + b) for a, b in _BOX_EDGES)
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(verts)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        fh.write(f"element edge {len(edges)}\n")
        fh.write("property int vertex1\nproperty int vertex2\n")
        fh.write("end_header\n")
        for x, y, z, r, g, b in verts:
            fh.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
        for a, b in edges:
            fh.write(f"{a} {b}\n")
