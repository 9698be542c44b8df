"""Dual-encoder fine-tuning with a selectable contrastive loss: per-epoch
(or plateau) learning-rate decay, JSON-lines logging, and best-on-validation
checkpoint selection by in-batch retrieval top-1."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backends import ToyTrainableDualEncoder
from .data import CaptionedImageSet, load_image
from .embedding import EmbeddingBatch
from .errors import BackendFrozen, BatchTooSmall
from .losses import LossConfig, loss_torch
from .retrieval import RetrievalProtocol, run_protocol

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "dhn_nce"
    loss: LossConfig = field(default_factory=LossConfig)
    learning_rate: float = 1e-6
    lr_decay: float = 0.5  # multiplicative, per epoch or per plateau
    decay_trigger: str = "epoch"  # "epoch" | "plateau"
    batch_size: int = 64
    max_epochs: int = 20
    max_steps: int | None = None
    seed: int = 0
    checkpoint_dir: str | None = None
    freeze_image_tower: bool = False
    freeze_text_tower: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.lr_decay <= 1):
            raise ValueError("lr_decay must be in (0, 1]")
        if self.decay_trigger not in ("epoch", "plateau"):
            raise ValueError(f"unknown decay trigger {self.decay_trigger!r}")


def lr_schedule(initial: float, decay: float, index: int) -> float:
    """Learning rate after `index` decay events: initial * decay**index."""
    return initial * decay**index


def _config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()[:16]


def _load_split(backend, split: CaptionedImageSet):
    images = torch.stack(
        [
            torch.tensor(load_image(p, backend.image_input_size), dtype=torch.float64)
            for p, _ in split.records
        ]
    )
    captions = [c for _, c in split.records]
    return images, captions


def _validation_top1(backend, images: torch.Tensor, captions: list[str], batch_size: int, seed: int) -> float:
    backend.eval()
    with torch.no_grad():
        img_emb, txt_emb = backend(images, captions)
    emb = EmbeddingBatch(img_emb.numpy(), txt_emb.numpy())
    corpus = CaptionedImageSet(records=[("", c) for c in captions], split="val")
    protocol = RetrievalProtocol(
        batch_size=min(batch_size, len(captions)), runs=1, ks=(1,), seed=seed
    )
    result = run_protocol(backend, corpus, protocol, embeddings=emb)
    return result.accuracy["image_to_text"][1][0] / 100.0


def finetune(
    backend: ToyTrainableDualEncoder,
    data: dict[str, CaptionedImageSet],
    cfg: TrainConfig = TrainConfig(),
) -> dict:
    """Train `backend` on data['train'], select best weights by validation
    retrieval top-1 on data['val']; returns model, log records, and the best
    metric. Writes checkpoint + manifest + JSONL log when checkpoint_dir is
    set."""
    if not isinstance(backend, torch.nn.Module):
        raise BackendFrozen(f"backend {backend.name} does not support gradient updates")
    if cfg.batch_size < 2:
        raise BatchTooSmall("contrastive training needs batch_size >= 2")
    if not data.get("train") or not data.get("val"):
        raise ValueError("train and val splits must be non-empty")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_images, train_captions = _load_split(backend, data["train"])
    val_images, val_captions = _load_split(backend, data["val"])

    params = []
    for name, p in backend.named_parameters():
        frozen = (cfg.freeze_image_tower and name.startswith("image_proj")) or (
            cfg.freeze_text_tower and name.startswith("text_proj")
        )
        p.requires_grad_(not frozen)
        if not frozen:
            params.append(p)
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)

    records = []
    best = {"val_top1": -1.0, "state": None, "step": 0}
    step = 0
    decay_index = 0
    n = len(train_captions)
    done = False
    for epoch in range(cfg.max_epochs):
        lr = lr_schedule(cfg.learning_rate, cfg.lr_decay, decay_index)
        for g in opt.param_groups:
            g["lr"] = lr
        order = rng.permutation(n)
        backend.train()
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            opt.zero_grad()
            img_emb, txt_emb = backend(train_images[idx], [train_captions[i] for i in idx])
            loss = loss_torch(cfg.loss_kind, img_emb, txt_emb, cfg.loss)
            loss.backward()
            opt.step()
            step += 1
            records.append(
                {"step": step, "epoch": epoch, "loss": float(loss.item()), "lr": lr}
            )
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        val_top1 = _validation_top1(backend, val_images, val_captions, cfg.batch_size, cfg.seed)
        records.append(
            {"step": step, "epoch": epoch, "lr": lr, "val_top1": val_top1}
        )
        log.info("epoch %d step %d val_top1 %.4f", epoch, step, val_top1)
        improved = val_top1 > best["val_top1"]
        if improved:
            best = {
                "val_top1": val_top1,
                "state": {k: v.detach().clone() for k, v in backend.state_dict().items()},
                "step": step,
            }
        if cfg.decay_trigger == "epoch" or not improved:
            decay_index += 1
        if done:
            break

    backend.load_state_dict(best["state"])
    result = {"model": backend, "log": records, "best_val_top1": best["val_top1"], "best_step": best["step"]}
    if cfg.checkpoint_dir:
        ckdir = Path(cfg.checkpoint_dir)
        ckdir.mkdir(parents=True, exist_ok=True)
        torch.save(best["state"], ckdir / "best.pt")
        manifest = {
            "config_hash": _config_hash(cfg),
            "step": best["step"],
            "metric": {"val_top1": best["val_top1"]},
            "loss_kind": cfg.loss_kind,
        }
        (ckdir / "manifest.json").write_text(json.dumps(manifest, indent=2))
        with open(ckdir / "train_log.jsonl", "w") as f:
            for rec in records:
                f.write(json.dumps(rec) + "\n")
        result["checkpoint"] = str(ckdir / "best.pt")
    return result
