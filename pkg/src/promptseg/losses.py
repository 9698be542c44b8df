"""Contrastive losses for dual-encoder fine-tuning.

Implements the hard-negative decoupled loss (DHN-NCE) and the three baselines
it is compared against (InfoNCE, DCL, HN-NCE). The public entry points accept
numpy embedding batches and return value + optional analytic gradients; the
torch implementations below are shared with the fine-tuning engine.

The per-direction loss is a sum over anchors i of

    -s_ii / tau + log( sum_{j != i} exp(s_ij / tau) * W_ij )

with hardness weights W_ij = (B-1) * softmax_{j != i}(beta * s_ij / tau).
Substituting W gives a log-sum-exp-safe closed form,

    log(B-1) + LSE_{j != i}((1+beta) s_ij / tau) - LSE_{j != i}(beta s_ij / tau),

which is what the non-detached path computes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .embedding import IMAGE_TO_TEXT, EmbeddingBatch, SimilarityMatrix
from .errors import BatchTooSmall

LOSS_KINDS = ("dhn_nce", "infonce", "dcl", "hn_nce")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.6
    beta1: float = 0.15  # image-to-text hardness
    beta2: float = 0.15  # text-to-image hardness
    alpha: float = 1.0  # positive-term weight, HN-NCE baseline only
    detach_weights: bool = False
    reduction: str = "sum"  # "sum" (as printed) or "mean" over anchors

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("hardness parameters must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.reduction not in ("sum", "mean"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class HardnessWeights:
    """B x B weight matrix; diagonal is unused (set to 0)."""

    values: np.ndarray
    direction: str


@dataclass(frozen=True)
class LossOutput:
    value: float
    grad_image: np.ndarray | None = None
    grad_text: np.ndarray | None = None


def _off_diag_mask(b: int, device=None) -> torch.Tensor:
    return ~torch.eye(b, dtype=torch.bool, device=device)


def _masked_lse(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Row-wise logsumexp over entries where mask is True."""
    filled = logits.masked_fill(~mask, float("-inf"))
    return torch.logsumexp(filled, dim=1)


def _weighted_negative_term(
    logits: torch.Tensor, beta: float, detach: bool
) -> torch.Tensor:
    """log sum_{j != i} e^{logits_ij} W_ij, per row."""
    b = logits.size(0)
    off = _off_diag_mask(b, logits.device)
    if detach:
        with torch.no_grad():
            log_w = _log_hardness_weights(logits, beta)
        return _masked_lse(logits + log_w, off)
    lse_num = _masked_lse((1.0 + beta) * logits, off)
    lse_den = _masked_lse(beta * logits, off)
    return float(np.log(b - 1)) + lse_num - lse_den


def _log_hardness_weights(logits: torch.Tensor, beta: float) -> torch.Tensor:
    """log W_ij for j != i; diagonal entries are -inf."""
    b = logits.size(0)
    off = _off_diag_mask(b, logits.device)
    scaled = (beta * logits).masked_fill(~off, float("-inf"))
    return float(np.log(b - 1)) + scaled - torch.logsumexp(scaled, dim=1, keepdim=True)


def directional_loss_torch(
    kind: str, sim: torch.Tensor, cfg: LossConfig, beta: float
) -> torch.Tensor:
    """One retrieval direction of a contrastive loss, summed over anchors.

    `sim` is the anchor-by-candidate cosine matrix for that direction.
    """
    b = sim.size(0)
    if b < 2:
        raise BatchTooSmall("contrastive losses need B >= 2")
    logits = sim / cfg.temperature
    pos = torch.diagonal(logits)
    if kind == "infonce":
        denom = torch.logsumexp(logits, dim=1)
    elif kind == "dcl":
        denom = _masked_lse(logits, _off_diag_mask(b, sim.device))
    elif kind == "dhn_nce":
        denom = _weighted_negative_term(logits, beta, cfg.detach_weights)
    elif kind == "hn_nce":
        neg = _weighted_negative_term(logits, beta, cfg.detach_weights)
        stacked = torch.stack([float(np.log(cfg.alpha)) + pos, neg], dim=0)
        denom = torch.logsumexp(stacked, dim=0)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    per_anchor = -pos + denom
    total = per_anchor.sum()
    if cfg.reduction == "mean":
        total = total / b
    return total


def loss_torch(
    kind: str,
    image_embeddings: torch.Tensor,
    text_embeddings: torch.Tensor,
    cfg: LossConfig,
) -> torch.Tensor:
    """Both-direction loss on unit-norm torch embedding matrices."""
    sim = image_embeddings @ text_embeddings.T
    fwd = directional_loss_torch(kind, sim, cfg, cfg.beta1)
    bwd = directional_loss_torch(kind, sim.T, cfg, cfg.beta2)
    return fwd + bwd


def _evaluate(
    kind: str, batch: EmbeddingBatch, cfg: LossConfig, with_gradients: bool
) -> LossOutput:
    img = torch.tensor(batch.image_embeddings, dtype=torch.float64, requires_grad=with_gradients)
    txt = torch.tensor(batch.text_embeddings, dtype=torch.float64, requires_grad=with_gradients)
    value = loss_torch(kind, img, txt, cfg)
    if not with_gradients:
        return LossOutput(value=float(value.item()))
    value.backward()
    return LossOutput(
        value=float(value.item()),
        grad_image=img.grad.numpy(),
        grad_text=txt.grad.numpy(),
    )


def dhn_nce_loss(batch: EmbeddingBatch, cfg: LossConfig, with_gradients: bool = False) -> LossOutput:
    """Decoupled hard-negative contrastive loss over both retrieval directions."""
    return _evaluate("dhn_nce", batch, cfg, with_gradients)


def baseline_loss(
    kind: str, batch: EmbeddingBatch, cfg: LossConfig, with_gradients: bool = False
) -> LossOutput:
    """InfoNCE / DCL / HN-NCE baselines with the same batch and config."""
    if kind not in ("infonce", "dcl", "hn_nce"):
        raise ValueError(f"unknown baseline {kind!r}")
    return _evaluate(kind, batch, cfg, with_gradients)


def contrastive_loss(
    kind: str, batch: EmbeddingBatch, cfg: LossConfig, with_gradients: bool = False
) -> LossOutput:
    """Dispatch over all four implemented losses."""
    if kind == "dhn_nce":
        return dhn_nce_loss(batch, cfg, with_gradients)
    return baseline_loss(kind, batch, cfg, with_gradients)


def hardness_weights(sim: SimilarityMatrix, cfg: LossConfig, direction: str | None = None) -> HardnessWeights:
    """Hard-negative up-weighting matrix for one direction.

    Entry (i, j), j != i, is (B-1) times the softmax over k != i of
    beta * sim(i, k) / tau, evaluated at k = j. Rows sum to B-1 off-diagonal.
    """
    direction = direction or sim.direction
    beta = cfg.beta1 if direction == IMAGE_TO_TEXT else cfg.beta2
    logits = torch.tensor(sim.values / cfg.temperature, dtype=torch.float64)
    log_w = _log_hardness_weights(logits, beta)
    w = torch.exp(log_w).numpy()
    np.fill_diagonal(w, 0.0)
    return HardnessWeights(values=w, direction=direction)
