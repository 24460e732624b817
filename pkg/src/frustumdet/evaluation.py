"""Average precision for 3D and bird's-eye-view detection.

KITTI-style protocol: greedy per-scene matching in descending fused score,
difficulty buckets, interpolated precision at fixed recall points.
Ground truths outside the difficulty filter are "ignored": detections
matched to them are discarded, counting as neither hit nor false alarm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import iou_3d, iou_bev
from .data import difficulty_rank
from .errors import ConfigError

_MODES = {"3d": iou_3d, "bev": iou_bev}


@dataclass(frozen=True)
class EvalConfig:
    """Per-category IoU thresholds, recall sampling, difficulty cutoff."""

    iou_thresholds: dict = field(
        default_factory=lambda: {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
    )
    recall_points: int = 11
    difficulty: str = "hard"

    def __post_init__(self):
        for cat, thr in self.iou_thresholds.items():
            if not 0.0 < thr <= 1.0:
                raise ConfigError(f"IoU threshold for {cat!r} must be in (0, 1], got {thr}")
        if self.recall_points not in (11, 40):
            raise ConfigError(f"recall_points must be 11 or 40, got {self.recall_points}")
        if self.difficulty not in ("easy", "moderate", "hard"):
            raise ConfigError(f"unknown difficulty filter {self.difficulty!r}")


def recall_levels(points: int) -> np.ndarray:
    """11-point grid includes recall 0; the 40-point grid starts at 1/40."""
    if points == 11:
        return np.linspace(0.0, 1.0, 11)
    return np.linspace(1.0 / 40.0, 1.0, 40)


def match_scene(dets, gts, category: str, iou_threshold: float, max_rank: int, iou_fn):
    """Greedy matching for one scene and category.

    Returns (scores, outcomes, num_counted_gt) where outcome is 1 for a hit,
    0 for a false alarm and -1 for a detection absorbed by an ignored ground
    truth. Detections are processed in descending fused score; each ground
    truth matches at most once; counted ground truths take priority over
    ignored ones.
    """
    dets = [d for d in dets if d.category == category]
    counted, ignored = [], []
    for g in gts:
        if g.category != category:
            continue
        if g.difficulty == "ignore" or difficulty_rank(g.difficulty) > max_rank:
            ignored.append(g)
        else:
            counted.append(g)
    order = np.argsort([-d.score_fused for d in dets], kind="stable")
    counted_free = [True] * len(counted)
    ignored_free = [True] * len(ignored)
    scores = np.array([dets[i].score_fused for i in order])
    outcomes = np.zeros(len(order), dtype=np.int64)
    for row, di in enumerate(order):
        box = dets[int(di)].box
        best_iou, best_gi = 0.0, -1
        for gi, g in enumerate(counted):
            if not counted_free[gi]:
                continue
            iou = iou_fn(box, g.box)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0 and best_iou >= iou_threshold:
            counted_free[best_gi] = False
            outcomes[row] = 1
            continue
        best_iou, best_gi = 0.0, -1
        for gi, g in enumerate(ignored):
            if not ignored_free[gi]:
                continue
            iou = iou_fn(box, g.box)
            if iou > best_iou:
                best_iou, best_gi = iou, gi
        if best_gi >= 0 and best_iou >= iou_threshold:
            ignored_free[best_gi] = False
            outcomes[row] = -1
        else:
            outcomes[row] = 0
    return scores, outcomes, len(counted)


def interpolated_ap(scores: np.ndarray, outcomes: np.ndarray, num_gt: int, points: int):
    """Mean of max-precision-at-recall>=r over the recall grid; None without gts."""
    if num_gt == 0:
        return None
    keep = outcomes >= 0
    scores, outcomes = scores[keep], outcomes[keep]
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(outcomes[order] == 1)
    fp = np.cumsum(outcomes[order] == 0)
    recall = tp / num_gt
    precision = tp / np.maximum(1, tp + fp)
    ap = 0.0
    for r in recall_levels(points):
        at_least = precision[recall >= r - 1e-12]
        ap += float(at_least.max()) if at_least.size else 0.0
    return ap / len(recall_levels(points))


def evaluate(detections_per_frame: dict, labels_per_frame: dict, cfg: EvalConfig, mode: str = "3d") -> dict:
    """AP per category over all frames; frames without detections count too.

    Returns {category: {"ap": float | None, "num_gt", "tp", "fp", "ignored"}}.
    """
    if mode not in _MODES:
        raise ConfigError(f"unknown eval mode {mode!r}; choose from {sorted(_MODES)}")
    iou_fn = _MODES[mode]
    max_rank = difficulty_rank(cfg.difficulty)
    results = {}
    for category, threshold in cfg.iou_thresholds.items():
        all_scores, all_outcomes, num_gt = [], [], 0
        for frame_id in sorted(labels_per_frame):
            gts = labels_per_frame[frame_id] or []
            dets = detections_per_frame.get(frame_id, [])
            s, o, n = match_scene(dets, gts, category, threshold, max_rank, iou_fn)
            all_scores.append(s)
            all_outcomes.append(o)
            num_gt += n
        scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
        outcomes = (
            np.concatenate(all_outcomes) if all_outcomes else np.zeros(0, dtype=np.int64)
        )
        results[category] = {
            "ap": interpolated_ap(scores, outcomes, num_gt, cfg.recall_points),
            "num_gt": num_gt,
            "tp": int(np.sum(outcomes == 1)),
            "fp": int(np.sum(outcomes == 0)),
            "ignored": int(np.sum(outcomes == -1)),
        }
    return results


def results_table(results: dict, mode: str, cfg: EvalConfig) -> str:
    """Human-readable AP table."""
    lines = [
        f"AP ({mode}, {cfg.recall_points}-point, difficulty<={cfg.difficulty})",
        f"{'category':<12} {'AP':>8} {'gts':>6} {'tp':>6} {'fp':>6} {'ignored':>8}",
    ]
    for cat in sorted(results):
        r = results[cat]
        ap = "absent" if r["ap"] is None else f"{r['ap']:.4f}"
        lines.append(
            f"{cat:<12} {ap:>8} {r['num_gt']:>6} {r['tp']:>6} {r['fp']:>6} {r['ignored']:>8}"
        )
    return "\n".join(lines)


def results_kv(results: dict, mode: str) -> str:
    """Machine-readable `key value` lines, sorted by key."""
    lines = []
    for cat in sorted(results):
        r = results[cat]
        ap = "absent" if r["ap"] is None else "%.12g" % r["ap"]
        lines.append(f"ap_{mode}/{cat} {ap}")
        for key in ("num_gt", "tp", "fp", "ignored"):
            lines.append(f"{key}_{mode}/{cat} {r[key]}")
    return "\n".join(sorted(lines))
