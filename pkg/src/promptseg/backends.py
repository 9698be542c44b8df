"""Dual-encoder backends: a synthetic concept backend for desk-scale tests,
a small trainable encoder pair for fine-tuning experiments, and an adapter
slot for pretrained CLIP-family weights.

The synthetic backend plants one spatial template per vocabulary concept on a
coarse grid. Encoding an image correlates it against every template; the
image embedding is the correlation-weighted sum of per-concept directions.
This makes retrieval over distinct concepts perfect by construction and gives
the saliency code a target layer whose channel c activation is (response
times) template c.
"""
from __future__ import annotations

import difflib
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    ActivationsUnavailable,
    BackendUnavailable,
    EmptyPrompt,
    PreprocessError,
)

# Channel statistics published for the original CLIP preprocessing.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class NearestConceptWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BackendCapabilities:
    gradients_available: bool = False
    activations_exposed: bool = False
    concurrency_safe: bool = True


class DualEncoderHandle:
    """Common surface of every backend.

    encode_image / encode_text return unit-norm vectors of dimension
    ``embed_dim``. Backends exposing activations additionally implement
    ``target_layer_activations``.
    """

    name: str = "base"
    embed_dim: int = 0
    image_input_size: tuple[int, int] = (224, 224)
    capabilities: BackendCapabilities = BackendCapabilities()

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_text(self, prompt: str) -> np.ndarray:
        raise NotImplementedError

    def score(self, image: np.ndarray, text_embedding: np.ndarray) -> float:
        """Cosine similarity between the image and a text embedding."""
        return float(self.encode_image(image) @ np.asarray(text_embedding))

    def target_layer_activations(self, image: np.ndarray):
        """Return (activations C x h x w, grad_fn) for the target layer.

        grad_fn(text_embedding) evaluates d(score)/d(activations) at the
        returned activations.
        """
        raise ActivationsUnavailable(f"backend {self.name} exposes no activations")

    def _check_image(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        h, w = self.image_input_size
        if image.shape != (h, w, 3):
            raise PreprocessError(
                f"expected image of shape {(h, w, 3)}, got {image.shape}"
            )
        return image


def _disjoint_templates(n: int, grid: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """n non-overlapping rectangular templates on an h x w grid."""
    h, w = grid
    cells_h, cells_w = h // 4, w // 4
    if n > cells_h * cells_w:
        raise ValueError(f"grid {grid} fits at most {cells_h * cells_w} concepts")
    slots = rng.permutation(cells_h * cells_w)[:n]
    templates = np.zeros((n, h, w))
    for c, s in enumerate(slots):
        r, q = divmod(int(s), cells_w)
        templates[c, 4 * r : 4 * r + 4, 4 * q : 4 * q + 4] = 1.0
    return templates


class SyntheticDualEncoder(DualEncoderHandle):
    """Deterministic concept-template backend used as a desk-scale oracle."""

    def __init__(
        self,
        vocabulary: list[str] | None = None,
        embed_dim: int = 32,
        grid: tuple[int, int] = (16, 16),
        image_input_size: tuple[int, int] = (64, 64),
        seed: int = 0,
    ):
        vocabulary = list(vocabulary or ["disk", "square", "lung", "tumor"])
        if embed_dim < len(vocabulary):
            raise ValueError("embed_dim must be >= number of concepts")
        self.name = "synthetic"
        self.vocabulary = vocabulary
        self.embed_dim = embed_dim
        self.grid = grid
        self.image_input_size = image_input_size
        self.capabilities = BackendCapabilities(
            gradients_available=True, activations_exposed=True, concurrency_safe=True
        )
        rng = np.random.default_rng(seed)
        self.templates = _disjoint_templates(len(vocabulary), grid, rng)
        # Orthonormal concept directions: matched/mismatched margin is 1.0.
        gauss = rng.standard_normal((embed_dim, embed_dim))
        q, _ = np.linalg.qr(gauss)
        self.concept_dirs = q[: len(vocabulary)]
        # Constant off-vocabulary component keeps the embedding away from the
        # normalization optimum, so concept scores have nonzero gradients.
        self.bias_dir = q[len(vocabulary)] if embed_dim > len(vocabulary) else np.zeros(embed_dim)
        self.bias_scale = 0.25

    # -- text side ---------------------------------------------------------

    def concept_index(self, prompt: str) -> int:
        tokens = prompt.strip().lower().split()
        if not tokens:
            raise EmptyPrompt("prompt is empty after trimming")
        for tok in tokens:
            if tok in self.vocabulary:
                return self.vocabulary.index(tok)
        joined = " ".join(tokens)
        close = difflib.get_close_matches(joined, self.vocabulary, n=1, cutoff=0.0)
        idx = self.vocabulary.index(close[0])
        warnings.warn(
            f"prompt {prompt!r} names no vocabulary concept; using nearest {close[0]!r}",
            NearestConceptWarning,
        )
        return idx

    def encode_text(self, prompt: str) -> np.ndarray:
        return self.concept_dirs[self.concept_index(prompt)].copy()

    # -- image side --------------------------------------------------------

    def render_concept(self, concept: str, intensity: float = 1.0) -> np.ndarray:
        """Reference image for a concept: its template upsampled to input size."""
        c = self.vocabulary.index(concept)
        h, w = self.image_input_size
        img = _upsample_nearest(self.templates[c], (h, w)) * intensity
        return np.repeat(img[:, :, None], 3, axis=2)

    def concept_region(self, concept: str) -> np.ndarray:
        """Binary ground-truth mask of a concept at input resolution."""
        return self.render_concept(concept)[:, :, 0] > 0.5

    def _downsample(self, image: torch.Tensor) -> torch.Tensor:
        gray = image.mean(dim=2)
        gh, gw = self.grid
        return F.adaptive_avg_pool2d(gray[None, None], (gh, gw))[0, 0]

    def _forward(self, image: torch.Tensor):
        """Differentiable pipeline: image -> activations -> embedding."""
        small = self._downsample(image)
        tmpl = torch.tensor(self.templates, dtype=torch.float64)
        flat = small.reshape(-1)
        denom = flat.norm() * tmpl.reshape(len(self.vocabulary), -1).norm(dim=1)
        resp = (tmpl.reshape(len(self.vocabulary), -1) @ flat) / denom.clamp_min(1e-12)
        activations = resp[:, None, None] * tmpl
        return activations, self._embed_from_activations(activations)

    def _embed_from_activations(self, activations: torch.Tensor) -> torch.Tensor:
        tmpl = torch.tensor(self.templates, dtype=torch.float64)
        flat_t = tmpl.reshape(len(self.vocabulary), -1)
        strengths = (activations.reshape(len(self.vocabulary), -1) * flat_t).sum(dim=1)
        strengths = strengths / (flat_t * flat_t).sum(dim=1)
        dirs = torch.tensor(self.concept_dirs, dtype=torch.float64)
        emb = strengths.clamp_min(0.0) @ dirs
        emb = emb + self.bias_scale * torch.tensor(self.bias_dir, dtype=torch.float64)
        return emb / emb.norm().clamp_min(1e-12)

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        with torch.no_grad():
            _, emb = self._forward(torch.tensor(image, dtype=torch.float64))
        return emb.numpy()

    def target_layer_activations(self, image: np.ndarray):
        image = self._check_image(image)
        with torch.no_grad():
            acts, _ = self._forward(torch.tensor(image, dtype=torch.float64))
        acts_np = acts.numpy()

        def grad_fn(text_embedding: np.ndarray) -> np.ndarray:
            a = torch.tensor(acts_np, dtype=torch.float64, requires_grad=True)
            emb = self._embed_from_activations(a)
            score = emb @ torch.tensor(text_embedding, dtype=torch.float64)
            score.backward()
            return a.grad.numpy()

        return acts_np, grad_fn


def _upsample_nearest(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    ry = np.clip((np.arange(h) * arr.shape[0]) // h, 0, arr.shape[0] - 1)
    rx = np.clip((np.arange(w) * arr.shape[1]) // w, 0, arr.shape[1] - 1)
    return arr[np.ix_(ry, rx)]


class ToyTrainableDualEncoder(nn.Module, DualEncoderHandle):
    """Small trainable encoder pair over a fixed concept vocabulary.

    Image branch: grayscale downsample to a grid, then a linear projection.
    Text branch: bag-of-vocabulary-words, then a linear projection. Random
    initialization puts in-batch retrieval at chance; contrastive training
    aligns the two towers.
    """

    def __init__(
        self,
        vocabulary: list[str],
        embed_dim: int = 16,
        grid: tuple[int, int] = (8, 8),
        image_input_size: tuple[int, int] = (64, 64),
        seed: int = 0,
    ):
        nn.Module.__init__(self)
        torch.manual_seed(seed)
        self.name = "toy_trainable"
        self.vocabulary = list(vocabulary)
        self.embed_dim = embed_dim
        self.grid = grid
        self.image_input_size = image_input_size
        self.capabilities = BackendCapabilities(
            gradients_available=True, activations_exposed=False, concurrency_safe=False
        )
        gh, gw = grid
        self.image_proj = nn.Linear(gh * gw, embed_dim).double()
        self.text_proj = nn.Linear(len(self.vocabulary), embed_dim).double()

    def image_features(self, images: torch.Tensor) -> torch.Tensor:
        """images: N x H x W x 3 float tensor -> N x (gh*gw)."""
        gray = images.mean(dim=3)
        gh, gw = self.grid
        pooled = F.adaptive_avg_pool2d(gray[:, None], (gh, gw))
        return pooled.reshape(images.size(0), -1)

    def text_features(self, prompts: list[str]) -> torch.Tensor:
        bags = torch.zeros(len(prompts), len(self.vocabulary), dtype=torch.float64)
        for i, p in enumerate(prompts):
            tokens = p.strip().lower().split()
            if not tokens:
                raise EmptyPrompt("prompt is empty after trimming")
            for tok in tokens:
                if tok in self.vocabulary:
                    bags[i, self.vocabulary.index(tok)] += 1.0
        return bags

    def forward(self, images: torch.Tensor, prompts: list[str]):
        img = F.normalize(self.image_proj(self.image_features(images)), dim=1, eps=1e-12)
        txt = F.normalize(self.text_proj(self.text_features(prompts)), dim=1, eps=1e-12)
        return img, txt

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        image = self._check_image(image)
        with torch.no_grad():
            t = torch.tensor(image, dtype=torch.float64)[None]
            emb = F.normalize(self.image_proj(self.image_features(t)), dim=1, eps=1e-12)
        return emb[0].numpy()

    def encode_text(self, prompt: str) -> np.ndarray:
        with torch.no_grad():
            emb = F.normalize(self.text_proj(self.text_features([prompt])), dim=1, eps=1e-12)
        return emb[0].numpy()


def preprocess_clip(image: np.ndarray) -> np.ndarray:
    """Scale to [0,1] if needed and channel-standardize with CLIP statistics."""
    image = np.asarray(image, dtype=np.float64)
    if image.max() > 1.0 + 1e-9:
        image = image / 255.0
    return (image - np.asarray(CLIP_MEAN)) / np.asarray(CLIP_STD)


class PretrainedDualEncoder(DualEncoderHandle):
    """Adapter slot for CLIP-family weights loaded from a local path.

    Weights are never vendored; construction fails with BackendUnavailable
    when the runtime or the weights are missing.
    """

    def __init__(self, weights_path: str, target_layer: str | None = None,
                 image_input_size: tuple[int, int] = (224, 224)):
        import os

        if not weights_path or not os.path.exists(weights_path):
            raise BackendUnavailable(f"weights not found at {weights_path!r}")
        try:
            import open_clip  # noqa: F401
        except ImportError as exc:
            raise BackendUnavailable("open_clip is required for pretrained backends") from exc
        self.name = "pretrained"
        self.weights_path = weights_path
        self.target_layer = target_layer
        self.image_input_size = image_input_size
        self.capabilities = BackendCapabilities(
            gradients_available=True, activations_exposed=True, concurrency_safe=False
        )
        raise BackendUnavailable(
            "pretrained adapter requires open_clip weights; configure backend.weights_path"
        )


def create_backend(config: dict) -> DualEncoderHandle:
    """Instantiate a backend from config keys backend.name / weights_path /
    target_layer / input_size."""
    name = config.get("name", "synthetic")
    size = tuple(config.get("input_size", (64, 64)))
    if name == "synthetic":
        return SyntheticDualEncoder(
            vocabulary=config.get("vocabulary"),
            embed_dim=int(config.get("embed_dim", 32)),
            image_input_size=size,
            seed=int(config.get("seed", 0)),
        )
    if name == "toy_trainable":
        return ToyTrainableDualEncoder(
            vocabulary=config["vocabulary"],
            embed_dim=int(config.get("embed_dim", 16)),
            image_input_size=size,
            seed=int(config.get("seed", 0)),
        )
    if name == "pretrained":
        return PretrainedDualEncoder(
            weights_path=config.get("weights_path", ""),
            target_layer=config.get("target_layer"),
            image_input_size=size,
        )
    raise BackendUnavailable(f"unknown backend {name!r}")
