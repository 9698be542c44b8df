"""Stateless HTTP service over the zero-shot pipeline, sharing one execution
path with the CLI so both surfaces produce bit-identical artifacts."""
from __future__ import annotations

import base64
import io
import json
import time
from dataclasses import asdict

import numpy as np
from PIL import Image

from . import __version__
from .backends import DualEncoderHandle, create_backend
from .crf import CrfParams
from .errors import DecodeError, EmptyPrompt, PromptSegError
from .maskgen import PromptableSegmenterHandle, ZeroShotOptions, create_segmenter, zero_shot_segment
from .metrics import auc, iou_dsc
from .saliency import compute_saliency, saliency_to_heatmap_u8

DEFAULT_CONFIG = {
    "backend": {"name": "synthetic", "input_size": (64, 64)},
    "segmenter": {"name": "intensity_threshold", "threshold": 0.5},
    "saliency": {"method": "gscorecam", "top_k": 60},
}


def load_config(path: str | None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    with open(path, encoding="utf-8") as f:
        cfg = json.load(f)
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    for key, val in cfg.items():
        if isinstance(val, dict):
            merged.setdefault(key, {}).update(val)
        else:
            merged[key] = val
    return merged


def decode_image_bytes(raw: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise DecodeError(f"cannot decode image payload: {exc}") from exc


def decode_image_b64(data: str) -> np.ndarray:
    return decode_image_bytes(base64.b64decode(data))


def decode_mask_bytes(raw: bytes) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(raw)) as im:
            return np.asarray(im.convert("L")) > 127
    except Exception as exc:
        raise DecodeError(f"cannot decode mask payload: {exc}") from exc


def decode_mask_b64(data: str) -> np.ndarray:
    return decode_mask_bytes(base64.b64decode(data))


def encode_mask_png(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(mask.astype(np.uint8) * 255, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_gray_png(values_u8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(values_u8, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_float_npy(values: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, values.astype(np.float32))
    return buf.getvalue()


def options_from_params(params: dict | None, defaults: dict) -> ZeroShotOptions:
    params = dict(params or {})
    crf_overrides = params.get("crf") or {}
    crf = CrfParams(**{**asdict(CrfParams()), **crf_overrides})
    return ZeroShotOptions(
        method=params.get("method", defaults.get("method", "gscorecam")),
        top_k=int(params.get("top_k", defaults.get("top_k", 60))),
        crf=crf,
        min_area_fraction=float(params.get("min_area_fraction", 0.01)),
        multi_box=bool(params.get("multi_box", True)),
    )


def execute_segment(
    backend: DualEncoderHandle,
    segmenter: PromptableSegmenterHandle,
    image: np.ndarray,
    prompt: str,
    options: ZeroShotOptions,
    gt: np.ndarray | None = None,
) -> dict:
    """Run the zero-shot pipeline and serialize every artifact.

    The CLI and the HTTP API both call this; the byte payloads here are the
    contract for their equivalence.
    """
    if not prompt or not prompt.strip():
        raise EmptyPrompt("prompt must be non-empty")
    timings = {}
    t0 = time.perf_counter()
    result = zero_shot_segment(backend, segmenter, image, prompt, options)
    timings["pipeline_s"] = max(time.perf_counter() - t0, 0.0)

    response = {
        "saliency_npy_b64": base64.b64encode(encode_float_npy(result.saliency.values)).decode(),
        "heatmap_png_b64": base64.b64encode(
            encode_gray_png(saliency_to_heatmap_u8(result.saliency))
        ).decode(),
        "boxes": [b.as_tuple() for b in result.boxes],
        "mask_png_b64": base64.b64encode(encode_mask_png(result.mask)).decode(),
        "provenance": result.provenance,
        "timings": timings,
    }
    if gt is not None:
        i, d = iou_dsc(result.mask, gt)
        metrics = {"iou": i, "dsc": d}
        gt_b = np.asarray(gt).astype(bool)
        if gt_b.any() and not gt_b.all():
            metrics["auc"] = auc(result.saliency.values, gt)
        response["metrics"] = metrics
    return response


def create_app(config: dict | None = None):
    """FastAPI app exposing the pipeline; backends are created once and
    shared (the synthetic backends are concurrency-safe and read-only)."""
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    config = config or load_config(None)
    backend = create_backend(config["backend"])
    segmenter = create_segmenter(config["segmenter"])
    app = FastAPI(title="promptseg", version=__version__)

    @app.exception_handler(PromptSegError)
    async def _error_handler(request: Request, exc: PromptSegError):
        return JSONResponse(status_code=400, content={"error": exc.code, "message": str(exc)})

    @app.get("/api/health")
    def health():
        return {"status": "ok", "backends": [backend.name, segmenter.name]}

    @app.get("/api/backends")
    def backends():
        return {
            "dual_encoder": {
                "name": backend.name,
                "embed_dim": backend.embed_dim,
                "input_size": list(backend.image_input_size),
                "capabilities": asdict(backend.capabilities),
            },
            "segmenter": {"name": segmenter.name, "deterministic": segmenter.deterministic},
        }

    @app.post("/api/segment")
    def segment(payload: dict):
        prompt = payload.get("prompt", "")
        if not prompt.strip():
            raise EmptyPrompt("prompt must be non-empty")
        image = decode_image_b64(payload["image_b64"])
        gt = decode_mask_b64(payload["gt_b64"]) if payload.get("gt_b64") else None
        options = options_from_params(payload.get("params"), config["saliency"])
        return execute_segment(backend, segmenter, image, prompt, options, gt)

    @app.post("/api/saliency")
    def saliency_endpoint(payload: dict):
        prompt = payload.get("prompt", "")
        if not prompt.strip():
            raise EmptyPrompt("prompt must be non-empty")
        image = decode_image_b64(payload["image_b64"])
        params = payload.get("params") or {}
        sal = compute_saliency(
            backend,
            image,
            prompt,
            method=params.get("method", config["saliency"]["method"]),
            top_k=int(params.get("top_k", config["saliency"]["top_k"])),
        )
        return {
            "saliency_npy_b64": base64.b64encode(encode_float_npy(sal.values)).decode(),
            "heatmap_png_b64": base64.b64encode(
                encode_gray_png(saliency_to_heatmap_u8(sal))
            ).decode(),
            "method": sal.method,
            "top_k": sal.top_k,
        }

    @app.post("/api/metrics")
    def metrics_endpoint(payload: dict):
        pred = decode_mask_b64(payload["pred_b64"])
        gt = decode_mask_b64(payload["gt_b64"])
        i, d = iou_dsc(pred, gt)
        out = {"iou": i, "dsc": d}
        gt_b = gt.astype(bool)
        if gt_b.any() and not gt_b.all():
            scores = pred.astype(np.float64)
            if payload.get("scores_npy_b64"):
                scores = np.load(io.BytesIO(base64.b64decode(payload["scores_npy_b64"])))
            out["auc"] = auc(scores, gt)
        return out

    return app


def serve(config_path: str | None = None, host: str = "127.0.0.1", port: int = 8000):
    import uvicorn

    app = create_app(load_config(config_path))
    uvicorn.run(app, host=host, port=port)
