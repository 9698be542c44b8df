"""Shared numeric substrate: unit-normalized embedding batches and cosine
similarity matrices.

All math here is plain numpy in float64; the training path (torch) has its own
precision but test tolerances refer to this path.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmall, ZeroVectorRow

IMAGE_TO_TEXT = "image_to_text"
TEXT_TO_IMAGE = "text_to_image"


def normalize_rows(m: np.ndarray) -> np.ndarray:
    """L2-normalize every row of a 2D array.

    Raises ZeroVectorRow if any row norm is below 1e-12: a zero row signals
    an upstream encoder failure and must not be silently perturbed.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected 2D array, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise ZeroVectorRow(f"row {bad} has norm {norms[bad]:.3e}")
    return m / norms[:, None]


@dataclass(frozen=True)
class EmbeddingBatch:
    """Paired image/text embedding matrices for one batch.

    Row i of image_embeddings is the positive pair of row i of
    text_embeddings. Both matrices are row-unit-norm.
    """

    image_embeddings: np.ndarray  # B x D
    text_embeddings: np.ndarray  # B x D

    def __post_init__(self):
        img = np.asarray(self.image_embeddings, dtype=np.float64)
        txt = np.asarray(self.text_embeddings, dtype=np.float64)
        if img.shape != txt.shape or img.ndim != 2:
            raise ValueError(
                f"embedding shapes must match and be 2D, got {img.shape} vs {txt.shape}"
            )
        if img.shape[0] < 2:
            raise BatchTooSmall("contrastive batches need B >= 2")
        for name, m in (("image", img), ("text", txt)):
            err = np.abs(np.linalg.norm(m, axis=1) - 1.0)
            if np.any(err > 1e-6):
                raise ValueError(f"{name} embeddings are not unit-norm (max err {err.max():.2e})")
        object.__setattr__(self, "image_embeddings", img)
        object.__setattr__(self, "text_embeddings", txt)

    @property
    def batch_size(self) -> int:
        return self.image_embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.image_embeddings.shape[1]

    @classmethod
    def from_raw(cls, image_embeddings, text_embeddings) -> "EmbeddingBatch":
        """Build a batch from unnormalized encoder outputs."""
        return cls(normalize_rows(image_embeddings), normalize_rows(text_embeddings))


@dataclass(frozen=True)
class SimilarityMatrix:
    """B x B cosine similarities; entry (i, j) = dot(anchor_i, candidate_j)."""

    values: np.ndarray
    direction: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {v.shape}")
        if self.direction not in (IMAGE_TO_TEXT, TEXT_TO_IMAGE):
            raise ValueError(f"unknown direction {self.direction!r}")
        object.__setattr__(self, "values", v)

    @property
    def batch_size(self) -> int:
        return self.values.shape[0]


def similarity_matrix(batch: EmbeddingBatch, direction: str = IMAGE_TO_TEXT) -> SimilarityMatrix:
    """Cosine similarities between anchors and candidates.

    image_to_text anchors are image rows; text_to_image is its exact transpose.
    """
    s = batch.image_embeddings @ batch.text_embeddings.T
    if direction == TEXT_TO_IMAGE:
        s = s.T
    return SimilarityMatrix(values=s, direction=direction)
