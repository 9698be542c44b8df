"""Weakly supervised refinement: a residual U-Net trained on pseudo-masks,
validated against true masks."""
from __future__ import annotations

import logging
import pickle
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import SegmentationSet, load_image, load_mask
from .errors import CheckpointCorrupt, ConfigError, EmptyTrainingSet
from .metrics import iou_dsc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResUNetSpec:
    depth: int = 4
    base_channels: int = 32
    blocks_per_stage: int = 1
    in_channels: int = 3


@dataclass(frozen=True)
class WeakTrainConfig:
    dice_weight: float = 0.5
    ce_weight: float = 0.5
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 4
    patience: int = 10  # early stopping on validation DSC
    seed: int = 0

    def __post_init__(self):
        if self.dice_weight < 0 or self.ce_weight < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.dice_weight == 0 and self.ce_weight == 0:
            raise ConfigError("at least one of dice/ce weight must be positive")


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.shortcut = nn.Conv2d(in_ch, out_ch, 1, stride, 0, bias=False)

    def forward(self, x):
        h = self.conv1(F.relu(self.bn1(x)))
        h = self.conv2(F.relu(self.bn2(h)))
        return h + self.shortcut(x)


class ResUNet(nn.Module):
    """Residual U-Net producing a 1-channel probability map the size of the
    input (inputs are padded to a multiple of the downsampling factor and
    cropped back)."""

    def __init__(self, spec: ResUNetSpec = ResUNetSpec()):
        super().__init__()
        self.spec = spec
        ch = [spec.base_channels * (2**i) for i in range(spec.depth)]
        self.stem = ResBlock(spec.in_channels, ch[0])
        self.encoders = nn.ModuleList(
            [ResBlock(ch[i], ch[i + 1], stride=2) for i in range(spec.depth - 1)]
        )
        self.decoders = nn.ModuleList(
            [ResBlock(ch[i + 1] + ch[i], ch[i]) for i in reversed(range(spec.depth - 1))]
        )
        self.head = nn.Conv2d(ch[0], 1, 1)

    @property
    def factor(self) -> int:
        return 2 ** (self.spec.depth - 1)

    def forward(self, x):
        h, w = x.shape[2:]
        pad_h = (-h) % self.factor
        pad_w = (-w) % self.factor
        if pad_h or pad_w:
            x = F.pad(x, (0, pad_w, 0, pad_h), mode="replicate")
        skips = []
        x = self.stem(x)
        for enc in self.encoders:
            skips.append(x)
            x = enc(x)
        for dec in self.decoders:
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = dec(torch.cat([x, skips.pop()], dim=1))
        logits = self.head(x)[:, 0]
        return torch.sigmoid(logits[:, :h, :w])


def dice_bce_loss(
    probs: torch.Tensor, targets: torch.Tensor, dice_weight: float = 0.5,
    ce_weight: float = 0.5, eps: float = 1e-6,
) -> torch.Tensor:
    """Composite soft-dice + binary cross-entropy segmentation loss."""
    if dice_weight == 0 and ce_weight == 0:
        raise ConfigError("at least one of dice/ce weight must be positive")
    probs = probs.clamp(eps, 1 - eps)
    flat_p = probs.reshape(probs.shape[0], -1)
    flat_t = targets.reshape(targets.shape[0], -1)
    inter = (flat_p * flat_t).sum(dim=1)
    dice = 1 - (2 * inter + eps) / (flat_p.sum(dim=1) + flat_t.sum(dim=1) + eps)
    bce = F.binary_cross_entropy(flat_p, flat_t, reduction="none").mean(dim=1)
    return (dice_weight * dice + ce_weight * bce).mean()


def _to_tensors(images: np.ndarray, masks: np.ndarray):
    x = torch.tensor(np.asarray(images), dtype=torch.float32).permute(0, 3, 1, 2)
    y = torch.tensor(np.asarray(masks), dtype=torch.float32)
    return x, y


def train_weak_arrays(
    spec: ResUNetSpec,
    train_images: np.ndarray,  # N x H x W x 3 in [0,1]
    train_masks: np.ndarray,  # N x H x W binary pseudo-masks
    val_images: np.ndarray,
    val_masks: np.ndarray,  # true masks
    cfg: WeakTrainConfig = WeakTrainConfig(),
    checkpoint_path: str | Path | None = None,
) -> dict:
    """Train on pseudo-masks, select the best checkpoint by validation DSC."""
    if len(train_images) == 0:
        raise EmptyTrainingSet("no training records")
    torch.manual_seed(cfg.seed)
    model = ResUNet(spec)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    x_train, y_train = _to_tensors(train_images, train_masks)
    x_val, y_val = _to_tensors(val_images, val_masks)

    best = {"val_dsc": -1.0, "epoch": -1, "state": None}
    history = []
    rng = np.random.default_rng(cfg.seed)
    stale = 0
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(x_train))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            probs = model(x_train[idx])
            loss = dice_bce_loss(probs, y_train[idx], cfg.dice_weight, cfg.ce_weight)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.item()) * len(idx)
        epoch_loss /= len(order)
        val_dsc = evaluate_dsc(model, x_val, y_val)
        history.append({"epoch": epoch, "train_loss": epoch_loss, "val_dsc": val_dsc})
        log.info("epoch %d loss %.4f val_dsc %.4f", epoch, epoch_loss, val_dsc)
        if val_dsc > best["val_dsc"]:
            best = {
                "val_dsc": val_dsc,
                "epoch": epoch,
                "state": {k: v.detach().clone() for k, v in model.state_dict().items()},
            }
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    model.load_state_dict(best["state"])
    report = {
        "best_epoch": best["epoch"],
        "best_val_dsc": best["val_dsc"],
        "pseudo_mask_val_dsc": _pseudo_vs_gt_dsc(train_masks, val_masks),
        "history": history,
    }
    if checkpoint_path is not None:
        torch.save(
            {"spec": asdict(spec), "state_dict": best["state"], "report": report},
            checkpoint_path,
        )
    return {"model": model, "report": report}


def _pseudo_vs_gt_dsc(train_masks, val_masks) -> float | None:
    # Only meaningful when the sets are aligned; used by synthetic fixtures.
    if len(train_masks) != len(val_masks):
        return None
    return float(np.mean([iou_dsc(p, g)[1] for p, g in zip(train_masks, val_masks)]))


def evaluate_dsc(model: ResUNet, x: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    with torch.no_grad():
        probs = model(x)
    preds = (probs.numpy() > 0.5)
    return float(np.mean([iou_dsc(p, g)[1] for p, g in zip(preds, y.numpy() > 0.5)]))


def train_weak(
    spec: ResUNetSpec,
    pseudo_labeled_train: SegmentationSet,
    val: SegmentationSet,
    cfg: WeakTrainConfig = WeakTrainConfig(),
    checkpoint_path: str | Path | None = None,
    image_size: tuple[int, int] = (128, 128),
) -> dict:
    """File-backed entry point: loads images and masks then trains."""

    def load_set(s: SegmentationSet):
        imgs, masks = [], []
        for img_path, mask_path in s.records:
            if mask_path is None:
                continue
            imgs.append(load_image(img_path, image_size))
            masks.append(load_mask(mask_path, image_size))
        return np.asarray(imgs), np.asarray(masks)

    tr_i, tr_m = load_set(pseudo_labeled_train)
    va_i, va_m = load_set(val)
    if len(tr_i) == 0:
        raise EmptyTrainingSet("no labeled training records")
    return train_weak_arrays(spec, tr_i, tr_m, va_i, va_m, cfg, checkpoint_path)


def load_checkpoint(path: str | Path) -> ResUNet:
    try:
        payload = torch.load(path, weights_only=False)
        model = ResUNet(ResUNetSpec(**payload["spec"]))
        model.load_state_dict(payload["state_dict"])
    except (OSError, KeyError, RuntimeError, TypeError, pickle.UnpicklingError) as exc:
        raise CheckpointCorrupt(f"cannot load checkpoint {path}: {exc}") from exc
    model.eval()
    return model


def predict(model_or_path, image: np.ndarray) -> np.ndarray:
    """Probability map in [0,1] with the input's spatial shape."""
    model = model_or_path if isinstance(model_or_path, ResUNet) else load_checkpoint(model_or_path)
    model.eval()
    x = torch.tensor(image[None], dtype=torch.float32).permute(0, 3, 1, 2)
    with torch.no_grad():
        probs = model(x)[0].numpy()
    return probs
