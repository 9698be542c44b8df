"""Text-conditioned saliency maps over a dual encoder: GradCAM and the
perturbation-scored top-k channel variant (gScoreCAM)."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .backends import DualEncoderHandle
from .errors import ActivationsUnavailable


@dataclass(frozen=True)
class SaliencyMap:
    """Per-pixel relevance of a prompt in an image, max-normalized to [0,1]."""

    values: np.ndarray  # H x W in [0, 1]
    prompt: str
    method: str  # "gscorecam" | "gradcam"
    top_k: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.min() < 0 or v.max() > 1 + 1e-9:
            raise ValueError("saliency values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


def _upsample_bilinear(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    zoom = (h / arr.shape[0], w / arr.shape[1])
    return ndimage.zoom(arr, zoom, order=1, mode="nearest")


def _max_normalize(m: np.ndarray) -> np.ndarray:
    m = np.maximum(m, 0.0)
    peak = m.max()
    return m / peak if peak > 0 else m


def _min_max(m: np.ndarray) -> np.ndarray:
    lo, hi = m.min(), m.max()
    return (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)


def gradcam(backend: DualEncoderHandle, image: np.ndarray, prompt: str) -> SaliencyMap:
    """Channel weights = spatial mean gradient of the score per channel;
    map = max-normalized ReLU of the weighted channel sum, upsampled."""
    if not backend.capabilities.activations_exposed:
        raise ActivationsUnavailable(f"backend {backend.name} exposes no activations")
    text_emb = backend.encode_text(prompt)
    acts, grad_fn = backend.target_layer_activations(image)
    grads = grad_fn(text_emb)
    weights = grads.mean(axis=(1, 2))
    cam = np.tensordot(weights, acts, axes=1)
    out = _max_normalize(_upsample_bilinear(cam, image.shape[:2]))
    return SaliencyMap(values=out, prompt=prompt, method="gradcam")


def gscorecam(
    backend: DualEncoderHandle,
    image: np.ndarray,
    prompt: str,
    top_k: int = 60,
) -> SaliencyMap:
    """Rank channels by mean |gradient|, keep the top k, score each kept
    channel by masking the image with its normalized upsampled activation,
    and combine the channel maps weighted by a softmax over those scores."""
    if not backend.capabilities.activations_exposed:
        raise ActivationsUnavailable(f"backend {backend.name} exposes no activations")
    text_emb = backend.encode_text(prompt)
    acts, grad_fn = backend.target_layer_activations(image)
    n_channels = acts.shape[0]
    if top_k > n_channels:
        warnings.warn(f"top_k={top_k} exceeds {n_channels} channels; clipping")
        top_k = n_channels
    grads = grad_fn(text_emb)
    saliency_rank = np.abs(grads).mean(axis=(1, 2))
    # stable selection: rank descending, ties by channel index
    kept = np.lexsort((np.arange(n_channels), -saliency_rank))[:top_k]

    size = image.shape[:2]
    channel_maps = np.stack([_min_max(_upsample_bilinear(acts[c], size)) for c in kept])
    scores = np.array(
        [backend.score(image * m[:, :, None], text_emb) for m in channel_maps]
    )
    # softmax weighting over perturbation scores
    e = np.exp(scores - scores.max())
    weights = e / e.sum()
    cam = np.tensordot(weights, channel_maps, axes=1)
    return SaliencyMap(
        values=_max_normalize(cam), prompt=prompt, method="gscorecam", top_k=top_k
    )


def compute_saliency(
    backend: DualEncoderHandle,
    image: np.ndarray,
    prompt: str,
    method: str = "gscorecam",
    top_k: int = 60,
) -> SaliencyMap:
    if method == "gradcam":
        return gradcam(backend, image, prompt)
    if method == "gscorecam":
        return gscorecam(backend, image, prompt, top_k=top_k)
    raise ValueError(f"unknown saliency method {method!r}")


def saliency_to_heatmap_u8(sal: SaliencyMap) -> np.ndarray:
    """8-bit grayscale rendering of a saliency map."""
    return np.round(sal.values * 255).astype(np.uint8)
