"""HTTP wrapper around the detection core.

Stateless endpoints for box algebra, synthesis and evaluation always work;
/detect requires the app to have been created with a checkpoint. Domain
errors surface as HTTP 400 with a single-line message.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..boxes import OrientedBox3D, iou_3d, iou_bev, nms_rotated
from ..config import default_config
from ..data import (
    FRAME_CAMERA_RECT,
    CameraCalib,
    LabeledBox,
    PointCloud,
    RegionProposal2D,
    SceneSample,
    SynthConfig,
    make_synthetic_scene,
)
from ..errors import FrustumDetError
from ..evaluation import EvalConfig, evaluate
from ..pipeline import DetectionResult, infer_scene, load_model, refine_scene
from . import schemas as S

_MAX_SYNTH = 100


def _box(m: S.BoxModel) -> OrientedBox3D:
    return OrientedBox3D(m.center, m.sizes, m.yaw)


def _box_model(b: OrientedBox3D) -> S.BoxModel:
    return S.BoxModel(center=list(b.center), sizes=list(b.sizes), yaw=b.yaw)


def _label(m: S.LabelModel) -> LabeledBox:
    return LabeledBox(_box(m.box), m.category, m.difficulty)


def _detection(m: S.DetectionModel) -> DetectionResult:
    return DetectionResult(
        m.frame_id, m.category, _box(m.box), m.score_3d, m.score_2d, m.score_fused
    )


def _detection_model(d: DetectionResult) -> S.DetectionModel:
    return S.DetectionModel(
        frame_id=d.frame_id,
        category=d.category,
        box=_box_model(d.box),
        score_3d=d.score_3d,
        score_2d=d.score_2d,
        score_fused=d.score_fused,
    )


def create_app(checkpoint=None, refine_checkpoint=None, cfg: dict = None) -> FastAPI:
    """App factory; checkpoints are file paths, loaded once at startup."""
    app = FastAPI(title="frustumdet", version=__version__)
    model = refine_model = None
    if checkpoint is not None:
        model, saved_cfg = load_model(checkpoint)
        cfg = cfg or saved_cfg
    if refine_checkpoint is not None:
        refine_model, _ = load_model(refine_checkpoint)
    cfg = cfg or default_config()

    @app.exception_handler(FrustumDetError)
    async def _domain_error(request: Request, exc: FrustumDetError):
        return JSONResponse(
            status_code=400,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(
            status_code=400, content={"error": "ValueError", "detail": str(exc)}
        )

    @app.get("/health", response_model=S.HealthResponse)
    async def health():
        return S.HealthResponse(status="ok", version=__version__)

    @app.get("/config", response_model=S.ConfigResponse)
    async def config():
        return S.ConfigResponse(config=cfg)

    @app.post("/boxes/iou", response_model=S.IouResponse)
    async def boxes_iou(req: S.IouRequest):
        fn = {"3d": iou_3d, "bev": iou_bev}.get(req.mode)
        if fn is None:
            return JSONResponse(
                status_code=400,
                content={"error": "ConfigError", "detail": f"unknown mode {req.mode!r}"},
            )
        return S.IouResponse(iou=fn(_box(req.box_a), _box(req.box_b)), mode=req.mode)

    @app.post("/boxes/nms", response_model=S.NmsResponse)
    async def boxes_nms(req: S.NmsRequest):
        if len(req.boxes) != len(req.scores):
            return JSONResponse(
                status_code=400,
                content={
                    "error": "ShapeError",
                    "detail": f"{len(req.boxes)} boxes vs {len(req.scores)} scores",
                },
            )
        pairs = [(_box(b), s) for b, s in zip(req.boxes, req.scores)]
        return S.NmsResponse(keep=list(nms_rotated(pairs, req.iou_threshold)))

    @app.post("/synth", response_model=S.SynthResponse)
    async def synth(req: S.SynthRequest):
        if not 1 <= req.count <= _MAX_SYNTH:
            return JSONResponse(
                status_code=400,
                content={
                    "error": "ConfigError",
                    "detail": f"count must be in [1, {_MAX_SYNTH}]",
                },
            )
        synth_cfg = SynthConfig(
            categories=tuple(req.categories), box_count=req.box_count
        )
        rng = np.random.default_rng(req.seed)
        scenes = []
        for i in range(req.count):
            scene = make_synthetic_scene(synth_cfg, rng, frame_id=f"{i:06d}")
            scenes.append(
                S.SceneModel(
                    frame_id=scene.frame_id,
                    labels=[
                        S.LabelModel(
                            category=lab.category,
                            box=_box_model(lab.box),
                            difficulty=lab.difficulty,
                        )
                        for lab in scene.labels
                    ],
                    proposals=[
                        S.ProposalModel(
                            image_box=list(p.image_box),
                            category=p.category,
                            score_2d=p.score_2d,
                        )
                        for p in scene.proposals
                    ],
                    num_points=len(scene.cloud),
                    points=scene.cloud.points.tolist() if req.include_points else None,
                )
            )
        return S.SynthResponse(scenes=scenes)

    @app.post("/detect", response_model=S.DetectResponse)
    async def detect(req: S.DetectRequest):
        if model is None:
            return JSONResponse(
                status_code=503,
                content={"error": "ServiceError", "detail": "no checkpoint loaded"},
            )
        if req.refine and refine_model is None:
            return JSONResponse(
                status_code=503,
                content={
                    "error": "ServiceError",
                    "detail": "no refinement checkpoint loaded",
                },
            )
        cloud = PointCloud(req.points, frame=FRAME_CAMERA_RECT)
        calib = CameraCalib.simple(req.focal, req.cx, req.cy)
        proposals = [
            RegionProposal2D(tuple(p.image_box), p.category, p.score_2d)
            for p in req.proposals
        ]
        scene = SceneSample(req.frame_id, cloud, calib, proposals, None)
        dets = infer_scene(model, cfg, scene)
        if req.refine:
            dets = refine_scene(refine_model, cfg, scene, dets)
        return S.DetectResponse(detections=[_detection_model(d) for d in dets])

    @app.post("/evaluate", response_model=S.EvaluateResponse)
    async def evaluate_endpoint(req: S.EvaluateRequest):
        thresholds = req.iou_thresholds
        if thresholds is None:
            cats = sorted({lab.category for labs in req.labels.values() for lab in labs})
            thresholds = {c: 0.5 for c in cats}
        eval_cfg = EvalConfig(
            iou_thresholds=thresholds,
            recall_points=req.recall_points,
            difficulty=req.difficulty,
        )
        dets = {
            fid: [_detection(m) for m in models]
            for fid, models in req.detections.items()
        }
        labels = {
            fid: [_label(m) for m in models] for fid, models in req.labels.items()
        }
        results = evaluate(dets, labels, eval_cfg, req.mode)
        return S.EvaluateResponse(
            results={cat: S.CategoryResult(**vals) for cat, vals in results.items()}
        )

    return app
