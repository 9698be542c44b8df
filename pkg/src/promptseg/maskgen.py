"""Zero-shot segmentation pipeline: saliency -> CRF -> bounding boxes ->
box-promptable segmenter -> pseudo-mask, with full provenance."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import ndimage

from .backends import DualEncoderHandle
from .crf import CrfParams, crf_refine
from .errors import BackendUnavailable, EmptySegmentation, NoForeground
from .saliency import SaliencyMap, compute_saliency

log = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class BoxPrompt:
    """Inclusive pixel bounding box."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    def __post_init__(self):
        if not (0 <= self.xmin <= self.xmax and 0 <= self.ymin <= self.ymax):
            raise ValueError(f"degenerate box {self}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass
class PseudoMask:
    mask: np.ndarray  # H x W bool
    boxes: list[BoxPrompt]
    saliency: SaliencyMap
    segmenter_name: str
    provenance: dict = field(default_factory=dict)


class PromptableSegmenterHandle:
    """A segmenter producing a mask from an image plus box prompts."""

    name: str = "base"
    deterministic: bool = True

    def segment_box(self, image: np.ndarray, box: BoxPrompt) -> np.ndarray:
        raise NotImplementedError


class IntensityThresholdSegmenter(PromptableSegmenterHandle):
    """Synthetic box-promptable segmenter: box interior intersected with an
    intensity threshold (desk-scale stand-in for a promptable foundation
    segmenter)."""

    def __init__(self, threshold: float = 0.5):
        self.name = "intensity_threshold"
        self.threshold = threshold
        self.deterministic = True

    def segment_box(self, image: np.ndarray, box: BoxPrompt) -> np.ndarray:
        gray = image.mean(axis=2) if image.ndim == 3 else image
        mask = np.zeros(gray.shape, dtype=bool)
        region = gray[box.ymin : box.ymax + 1, box.xmin : box.xmax + 1]
        mask[box.ymin : box.ymax + 1, box.xmin : box.xmax + 1] = region > self.threshold
        return mask


class SamSegmenter(PromptableSegmenterHandle):
    """Adapter slot for Segment-Anything-style checkpoints (never vendored)."""

    def __init__(self, checkpoint_path: str):
        import os

        if not checkpoint_path or not os.path.exists(checkpoint_path):
            raise BackendUnavailable(f"segmenter checkpoint not found at {checkpoint_path!r}")
        try:
            from segment_anything import sam_model_registry  # noqa: F401
        except ImportError as exc:
            raise BackendUnavailable("segment_anything package is required") from exc
        raise BackendUnavailable("SAM adapter requires a configured checkpoint")


def create_segmenter(config: dict) -> PromptableSegmenterHandle:
    name = config.get("name", "intensity_threshold")
    if name == "intensity_threshold":
        return IntensityThresholdSegmenter(threshold=float(config.get("threshold", 0.5)))
    if name == "sam":
        return SamSegmenter(checkpoint_path=config.get("checkpoint_path", ""))
    raise BackendUnavailable(f"unknown segmenter {name!r}")


def extract_boxes(
    mask: np.ndarray, min_area_fraction: float = 0.01, multi_box: bool = True
) -> list[BoxPrompt]:
    """Tight boxes of 8-connected components above the area threshold,
    largest area first. multi_box=False keeps only the largest."""
    mask = np.asarray(mask).astype(bool)
    h, w = mask.shape
    labeled, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    boxes = []
    for comp in range(1, n + 1):
        area = int(np.count_nonzero(labeled == comp))
        if area < min_area_fraction * h * w:
            continue
        ys, xs = np.nonzero(labeled == comp)
        boxes.append(
            (area, BoxPrompt(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())))
        )
    boxes.sort(key=lambda t: (-t[0], t[1].as_tuple()))
    if not boxes:
        raise NoForeground("no component passes the area threshold")
    if not multi_box:
        boxes = boxes[:1]
    return [b for _, b in boxes]


def segment_with_boxes(
    segmenter: PromptableSegmenterHandle, image: np.ndarray, boxes: list[BoxPrompt]
) -> np.ndarray:
    """Union of per-box segmenter masks."""
    h, w = image.shape[:2]
    out = np.zeros((h, w), dtype=bool)
    for box in boxes:
        if box.xmax >= w or box.ymax >= h:
            raise ValueError(f"box {box} outside image {h}x{w}")
        part = segmenter.segment_box(image, box)
        if not part.any():
            log.warning("box %s produced an empty mask", box)
        out |= part.astype(bool)
    return out


@dataclass(frozen=True)
class ZeroShotOptions:
    method: str = "gscorecam"
    top_k: int = 60
    crf: CrfParams = CrfParams()
    min_area_fraction: float = 0.01
    multi_box: bool = True


def zero_shot_segment(
    backend: DualEncoderHandle,
    segmenter: PromptableSegmenterHandle,
    image: np.ndarray,
    prompt: str,
    options: ZeroShotOptions = ZeroShotOptions(),
) -> PseudoMask:
    """Full zero-shot composition: saliency -> CRF -> boxes -> segmenter.

    NoForeground from box extraction surfaces as EmptySegmentation carrying
    the saliency map.
    """
    sal = compute_saliency(backend, image, prompt, method=options.method, top_k=options.top_k)
    refined = crf_refine(image, sal.values, options.crf)
    try:
        boxes = extract_boxes(refined, options.min_area_fraction, options.multi_box)
    except NoForeground as exc:
        raise EmptySegmentation(str(exc), saliency=sal) from exc
    mask = segment_with_boxes(segmenter, image, boxes)
    provenance = {
        "backend": backend.name,
        "segmenter": segmenter.name,
        "prompt": prompt,
        "method": sal.method,
        "top_k": sal.top_k,
        "crf": asdict(options.crf),
        "min_area_fraction": options.min_area_fraction,
        "multi_box": options.multi_box,
        "boxes": [b.as_tuple() for b in boxes],
    }
    return PseudoMask(
        mask=mask, boxes=boxes, saliency=sal, segmenter_name=segmenter.name,
        provenance=provenance,
    )
