"""Command line front end: one binary with a subcommand per pipeline stage.

Every command echoes its fully resolved config so runs are reproducible
from the log alone. Domain errors exit with the class's dedicated code and
a single `error: <Class>: <message>` line on stderr.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import (
    default_config,
    dump_config,
    load_config,
    merge_config,
    parse_overrides,
    save_config,
)
from .data import (
    SynthConfig,
    list_frames,
    load_proposals,
    load_scene,
    make_synthetic_scene,
    proposals_path,
    save_proposals,
    write_scene,
)
from .errors import FrustumDetError
from .evaluation import EvalConfig, evaluate, results_kv, results_table
from .net import PRESETS
from .pipeline import (
    export_ply,
    infer_scene,
    load_detections,
    load_model,
    refine_scene,
    save_detections,
    save_model,
    train,
)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="config file with key = value lines")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument(
        "--preset", choices=sorted(PRESETS), help="network preset override"
    )
    parser.add_argument(
        "--workers", type=int, default=1, help="parallel scenes during inference"
    )
    parser.add_argument(
        "overrides", nargs="*", metavar="key=value", help="config overrides"
    )


def resolve_config(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    cfg = merge_config(cfg, parse_overrides(args.overrides))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.preset is not None:
        cfg["preset"] = args.preset
    return cfg


def _echo(cfg: dict):
    print("# resolved config")
    sys.stdout.write(dump_config(cfg))


def _load_dataset(root, cfg: dict) -> list:
    frames = list_frames(root)
    ppath = proposals_path(root)
    props = load_proposals(ppath) if os.path.exists(ppath) else {}
    cats = tuple(cfg["categories"])
    return [load_scene(root, fid, props.get(fid), cats) for fid in frames]


def cmd_prepare(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    scenes = _load_dataset(args.data, cfg)
    sums = {c: np.zeros(3) for c in cfg["categories"]}
    counts = {c: 0 for c in cfg["categories"]}
    for scene in scenes:
        for lab in scene.labels or []:
            if lab.category in sums and lab.difficulty != "ignore":
                sums[lab.category] += lab.box.sizes
                counts[lab.category] += 1
    mean_sizes = dict(cfg["mean_sizes"])
    for cat in cfg["categories"]:
        if counts[cat]:
            mean_sizes[cat] = list(sums[cat] / counts[cat])
        else:
            print(f"prepare: no labels for {cat}, keeping default mean size")
    cfg["mean_sizes"] = mean_sizes
    save_config(args.out, cfg)
    print(f"wrote {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    synth_cfg = SynthConfig(
        categories=tuple(cfg["categories"]),
        box_count=int(cfg["synth_box_count"]),
        depth_range=(cfg["synth_depth_min"], cfg["synth_depth_max"]),
        noise_sigma=cfg["synth_noise"],
        points_per_box=int(cfg["synth_points_per_box"]),
        clutter_points=int(cfg["synth_clutter"]),
    )
    rng = np.random.default_rng(cfg["seed"])
    os.makedirs(args.out, exist_ok=True)
    proposals = {}
    for i in range(args.count):
        scene = make_synthetic_scene(synth_cfg, rng, frame_id=f"{i:06d}")
        write_scene(args.out, scene)
        proposals[scene.frame_id] = scene.proposals
    save_proposals(proposals_path(args.out), proposals)
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    scenes = _load_dataset(args.data, cfg)
    model, _ = train(scenes, cfg, stage=args.stage, log=print)
    save_model(args.out, model, cfg)
    print(f"wrote checkpoint {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    model, _ = load_model(args.checkpoint)
    scenes = _load_dataset(args.data, cfg)
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            per_scene = list(pool.map(lambda s: infer_scene(model, cfg, s), scenes))
    else:
        per_scene = [infer_scene(model, cfg, s) for s in scenes]
    dets = [d for scene_dets in per_scene for d in scene_dets]
    save_detections(args.out, dets)
    print(f"wrote {len(dets)} detections to {args.out}")
    return 0


def cmd_refine(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    model, _ = load_model(args.checkpoint)
    per_frame = load_detections(args.detections)
    scenes = _load_dataset(args.data, cfg)
    out = []
    for scene in scenes:
        dets = per_frame.get(scene.frame_id)
        if dets:
            out.extend(refine_scene(model, cfg, scene, dets))
    save_detections(args.out, out)
    print(f"wrote {len(out)} refined detections to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    per_frame = load_detections(args.detections)
    scenes = _load_dataset(args.data, cfg)
    labels = {s.frame_id: s.labels or [] for s in scenes}
    eval_cfg = EvalConfig(
        iou_thresholds={
            c: cfg["eval_iou"].get(c, 0.5) for c in cfg["categories"]
        },
        recall_points=int(cfg["eval_points"]),
        difficulty=args.difficulty,
    )
    results = evaluate(per_frame, labels, eval_cfg, args.mode)
    print(results_table(results, args.mode, eval_cfg))
    print(results_kv(results, args.mode))
    return 0


def cmd_export(args) -> int:
    cfg = resolve_config(args)
    _echo(cfg)
    per_frame = load_detections(args.detections) if args.detections else {}
    scenes = _load_dataset(args.data, cfg)
    os.makedirs(args.out, exist_ok=True)
    for scene in scenes:
        path = os.path.join(args.out, scene.frame_id + ".ply")
        export_ply(path, scene, per_frame.get(scene.frame_id, []))
    print(f"wrote {len(scenes)} scene files to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = resolve_config(args)
    _echo(cfg)
    app = create_app(args.checkpoint, args.refine_checkpoint, cfg)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frustumdet",
        description="Amodal 3D detection from frustum point cloud sequences.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="compute mean sizes from labels into a config")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="output config path")
    _add_common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("synth", help="generate synthetic annotated scenes")
    p.add_argument("--out", required=True, help="output dataset root")
    p.add_argument("--count", type=int, default=1, help="number of scenes")
    _add_common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a detection or refinement stage")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--stage", choices=("detect", "refine"), default="detect")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="run detection over a dataset")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--checkpoint", required=True, help="detection checkpoint")
    p.add_argument("--out", required=True, help="output detection file")
    _add_common(p)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("refine", help="refine detections with a second stage")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--checkpoint", required=True, help="refinement checkpoint")
    p.add_argument("--detections", required=True, help="input detection file")
    p.add_argument("--out", required=True, help="output detection file")
    _add_common(p)
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("eval", help="average precision against dataset labels")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--detections", required=True, help="detection file")
    p.add_argument("--mode", choices=("3d", "bev"), default="3d")
    p.add_argument(
        "--difficulty", choices=("easy", "moderate", "hard"), default="hard"
    )
    _add_common(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("export", help="write viewer files (points + wireframes)")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--detections", help="optional detection file")
    _add_common(p)
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", help="detection checkpoint")
    p.add_argument("--refine-checkpoint", help="refinement checkpoint")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    _add_common(p)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except FrustumDetError as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
