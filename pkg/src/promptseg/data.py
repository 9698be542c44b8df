"""Dataset ingestion: caption cleaning, deterministic splits, image/mask
loading.

Expected layout: dataset_root/{images/, masks/, captions.csv, splits.json};
masks share file stems with images and are single-channel PNGs.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadFractions, DecodeError

log = logging.getLogger(__name__)

MIN_CAPTION_LENGTH = 20
# Characters kept by default; everything else counts as "special".
DEFAULT_ALLOWED = re.compile(r"[^A-Za-z0-9 .,\-%()]")


@dataclass
class CaptionedImageSet:
    records: list[tuple[str, str]]  # (image_path, caption)
    split: str = "train"
    dropped: int = 0

    def __len__(self):
        return len(self.records)


@dataclass
class SegmentationSet:
    records: list[tuple[str, str | None]]  # (image_path, mask_path or None)
    split: str = "train"

    def __len__(self):
        return len(self.records)


def clean_caption(caption: str, allowed: re.Pattern = DEFAULT_ALLOWED) -> str:
    return allowed.sub("", caption).strip()


def clean_captions(
    raw: list[tuple[str, str]],
    min_length: int = MIN_CAPTION_LENGTH,
    allowed: re.Pattern = DEFAULT_ALLOWED,
    split: str = "train",
) -> CaptionedImageSet:
    """Strip special characters and surrounding whitespace, then drop records
    whose cleaned caption is shorter than min_length."""
    kept, dropped = [], 0
    for image, caption in raw:
        cleaned = clean_caption(caption, allowed)
        if len(cleaned) < min_length:
            dropped += 1
            continue
        kept.append((image, cleaned))
    if not kept:
        log.warning("caption cleaning dropped every record (%d input)", dropped)
    return CaptionedImageSet(records=kept, split=split, dropped=dropped)


def split_sizes(n: int, fractions: tuple[float, ...]) -> list[int]:
    """Apportion n records by largest remainder; sizes are within 1 of
    fraction * n and sum to n."""
    if abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise BadFractions(f"fractions {fractions} must be nonnegative and sum to 1")
    exact = [f * n for f in fractions]
    sizes = [int(np.floor(e)) for e in exact]
    remainders = [e - s for e, s in zip(exact, sizes)]
    for i in sorted(range(len(sizes)), key=lambda i: -remainders[i])[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def split_dataset(
    dataset: CaptionedImageSet,
    fractions: tuple[float, ...] = (0.85, 0.15),
    names: tuple[str, ...] = ("train", "val"),
    seed: int = 0,
) -> dict[str, CaptionedImageSet]:
    """Deterministic seeded split into disjoint subsets covering the input."""
    if len(fractions) != len(names):
        raise BadFractions("fractions and names must have equal length")
    n = len(dataset.records)
    sizes = split_sizes(n, fractions)
    order = np.random.default_rng(seed).permutation(n)
    out, start = {}, 0
    for name, size in zip(names, sizes):
        idx = sorted(order[start : start + size])
        out[name] = CaptionedImageSet(
            records=[dataset.records[i] for i in idx], split=name
        )
        start += size
    return out


def load_image(path: str | Path, target_size: tuple[int, int] = (224, 224)) -> np.ndarray:
    """Decode, resize, and scale an image to target_size x 3 floats in [0,1].

    Grayscale inputs are replicated across channels.
    """
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            h, w = target_size
            if im.size != (w, h):
                im = im.resize((w, h), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return arr


def load_mask(path: str | Path, target_size: tuple[int, int] | None = None) -> np.ndarray:
    """Load a single-channel mask and binarize at >127 (8-bit scale)."""
    try:
        with Image.open(path) as im:
            im = im.convert("L")
            if target_size is not None:
                h, w = target_size
                if im.size != (w, h):
                    im = im.resize((w, h), Image.NEAREST)
            arr = np.asarray(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return arr > 127


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray((np.asarray(mask).astype(np.uint8)) * 255, mode="L").save(path)


def load_captions_csv(dataset_root: str | Path, split: str | None = None) -> CaptionedImageSet:
    """Read captions.csv (columns image,caption) and clean it; when split is
    given, restrict to the stems listed in splits.json."""
    root = Path(dataset_root)
    raw = []
    with open(root / "captions.csv", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            raw.append((str(root / "images" / row["image"]), row["caption"]))
    if split is not None:
        with open(root / "splits.json", encoding="utf-8") as f:
            stems = set(json.load(f)[split])
        raw = [(p, c) for p, c in raw if Path(p).stem in stems]
    return clean_captions(raw, split=split or "train")


def load_segmentation_set(dataset_root: str | Path, split: str | None = None) -> SegmentationSet:
    """Pair images with masks sharing the same stem; mask may be absent."""
    root = Path(dataset_root)
    images = sorted((root / "images").iterdir())
    if split is not None:
        with open(root / "splits.json", encoding="utf-8") as f:
            stems = set(json.load(f)[split])
        images = [p for p in images if p.stem in stems]
    records = []
    for img in images:
        mask = root / "masks" / (img.stem + ".png")
        records.append((str(img), str(mask) if mask.exists() else None))
    return SegmentationSet(records=records, split=split or "train")
