"""Unified command-line interface. Every subcommand routes to the same
module operations as the HTTP service; failures exit nonzero with a
machine-readable JSON error on stderr."""
from __future__ import annotations

import base64
import csv
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from .errors import PromptSegError
from .service import (
    decode_image_bytes,
    decode_mask_bytes,
    execute_segment,
    load_config,
    options_from_params,
)


def _fail(exc: PromptSegError):
    sys.stderr.write(json.dumps({"error": exc.code, "message": str(exc)}) + "\n")
    sys.exit(1)


def handles_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PromptSegError as exc:
            _fail(exc)

    return wrapper


@click.group()
def main():
    """Text-prompted segmentation toolkit."""


def _make_backends(config_path: str | None):
    from .backends import create_backend
    from .maskgen import create_segmenter

    config = load_config(config_path)
    return config, create_backend(config["backend"]), create_segmenter(config["segmenter"])


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompt", required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--method", default=None, type=click.Choice(["gscorecam", "gradcam"]))
@click.option("--top-k", default=None, type=int)
@click.option("--multi-box/--single-box", default=True)
@handles_errors
def segment(image_path, prompt, gt_path, out_dir, config_path, method, top_k, multi_box):
    """Zero-shot segmentation: writes mask PNG, boxes JSON, saliency array,
    heatmap, and provenance."""
    config, backend, segmenter = _make_backends(config_path)
    image = decode_image_bytes(Path(image_path).read_bytes())
    gt = decode_mask_bytes(Path(gt_path).read_bytes()) if gt_path else None
    params = {"multi_box": multi_box}
    if method:
        params["method"] = method
    if top_k is not None:
        params["top_k"] = top_k
    options = options_from_params(params, config["saliency"])
    response = execute_segment(backend, segmenter, image, prompt, options, gt)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mask.png").write_bytes(base64.b64decode(response["mask_png_b64"]))
    (out / "heatmap.png").write_bytes(base64.b64decode(response["heatmap_png_b64"]))
    (out / "saliency.npy").write_bytes(base64.b64decode(response["saliency_npy_b64"]))
    (out / "boxes.json").write_text(json.dumps(response["boxes"]))
    (out / "provenance.json").write_text(json.dumps(response["provenance"], indent=2))
    if "metrics" in response:
        (out / "metrics.json").write_text(json.dumps(response["metrics"], indent=2))
    click.echo(f"wrote {out}")


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompt", required=True)
@click.option("--method", default="gscorecam", type=click.Choice(["gscorecam", "gradcam"]))
@click.option("--top-k", default=60, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@handles_errors
def saliency(image_path, prompt, method, top_k, out_path, config_path):
    """Saliency map only: float32 .npy plus an 8-bit heatmap PNG."""
    from .saliency import compute_saliency, saliency_to_heatmap_u8
    from .service import encode_gray_png

    _, backend, _ = _make_backends(config_path)
    image = decode_image_bytes(Path(image_path).read_bytes())
    sal = compute_saliency(backend, image, prompt, method=method, top_k=top_k)
    out = Path(out_path)
    np.save(out.with_suffix(".npy"), sal.values.astype(np.float32))
    out.with_suffix(".png").write_bytes(encode_gray_png(saliency_to_heatmap_u8(sal)))
    click.echo(f"wrote {out.with_suffix('.npy')} and {out.with_suffix('.png')}")


@main.command("eval-seg")
@click.option("--pred-dir", required=True, type=click.Path(exists=True))
@click.option("--gt-dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--method", default="", help="method label for the report")
@click.option("--modality", default="", help="modality label for the report")
@handles_errors
def eval_seg(pred_dir, gt_dir, out_path, method, modality):
    """Evaluate predicted masks against ground truth; CSV report of
    mean/std IoU, DSC, AUC."""
    from .metrics import SegReport

    report = SegReport()
    preds = sorted(Path(pred_dir).glob("*.png"))
    if not preds:
        raise PromptSegError(f"no PNG masks in {pred_dir}")
    for pred_path in preds:
        gt_path = Path(gt_dir) / pred_path.name
        if not gt_path.exists():
            continue
        pred = decode_mask_bytes(pred_path.read_bytes())
        gt = decode_mask_bytes(gt_path.read_bytes())
        report.add(pred_path.stem, pred, gt)
    rows = report.to_csv_rows(method=method, modality=modality)
    with open(out_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["method", "modality", "metric", "mean", "std"])
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"wrote {out_path} ({len(report.records)} images)")


@main.command("eval-retrieval")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@handles_errors
def eval_retrieval(config_path):
    """Run the shuffled in-batch retrieval protocol; CSV of mean/std per
    direction and K."""
    from .backends import create_backend
    from .data import load_captions_csv
    from .retrieval import RetrievalProtocol, result_to_csv_rows, run_protocol

    cfg = json.loads(Path(config_path).read_text())
    backend = create_backend(cfg["backend"])
    corpus = load_captions_csv(cfg["dataset_root"], cfg.get("split"))
    proto = RetrievalProtocol(**cfg.get("protocol", {}))
    result = run_protocol(backend, corpus, proto)
    rows = result_to_csv_rows(result, model=cfg["backend"].get("name", "backend"))
    out = cfg.get("out", "retrieval.csv")
    with open(out, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "direction", "k", "mean", "std"])
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"wrote {out} ({result.evaluated_examples} evaluated examples)")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@handles_errors
def finetune(config_path):
    """Fine-tune a trainable dual encoder with a contrastive loss."""
    from .backends import create_backend
    from .data import load_captions_csv, split_dataset
    from .finetune import TrainConfig, finetune as run_finetune
    from .losses import LossConfig

    cfg = json.loads(Path(config_path).read_text())
    backend = create_backend(cfg["backend"])
    corpus = load_captions_csv(cfg["dataset_root"])
    splits = split_dataset(
        corpus,
        fractions=tuple(cfg.get("fractions", (0.85, 0.15))),
        seed=cfg.get("split_seed", 0),
    )
    train_cfg = TrainConfig(
        loss=LossConfig(**cfg.get("loss", {})),
        **{k: v for k, v in cfg.get("train", {}).items()},
    )
    result = run_finetune(backend, splits, train_cfg)
    click.echo(
        json.dumps({"best_val_top1": result["best_val_top1"], "best_step": result["best_step"]})
    )


@main.command("train-weak")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@handles_errors
def train_weak_cmd(config_path):
    """Train the residual U-Net on pseudo-masks."""
    from .data import load_segmentation_set
    from .weak import ResUNetSpec, WeakTrainConfig, train_weak

    cfg = json.loads(Path(config_path).read_text())
    spec = ResUNetSpec(**cfg.get("spec", {}))
    train_cfg = WeakTrainConfig(**cfg.get("train", {}))
    train_set = load_segmentation_set(cfg["train_root"], cfg.get("train_split"))
    val_set = load_segmentation_set(cfg["val_root"], cfg.get("val_split"))
    result = train_weak(
        spec, train_set, val_set, train_cfg,
        checkpoint_path=cfg.get("checkpoint", "weak_resunet.pt"),
        image_size=tuple(cfg.get("image_size", (128, 128))),
    )
    report = dict(result["report"])
    report.pop("history", None)
    click.echo(json.dumps(report))


@main.command()
@click.option("--ckpt", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@handles_errors
def predict(ckpt, image_path, out_path):
    """Probability map from a trained weak-supervision checkpoint."""
    from .service import encode_mask_png
    from .weak import predict as run_predict

    image = decode_image_bytes(Path(image_path).read_bytes())
    probs = run_predict(ckpt, image)
    out = Path(out_path)
    np.save(out.with_suffix(".npy"), probs.astype(np.float32))
    out.with_suffix(".png").write_bytes(encode_mask_png(probs > 0.5))
    click.echo(f"wrote {out.with_suffix('.npy')} and {out.with_suffix('.png')}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
@handles_errors
def serve(config_path, host, port):
    """Run the stateless HTTP service."""
    from .service import serve as run_serve

    run_serve(config_path, host=host, port=port)


if __name__ == "__main__":
    main()
