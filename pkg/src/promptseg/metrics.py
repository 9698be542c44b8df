"""Segmentation and statistical metrics: IoU, DSC, rank-based AUC, paired
t-test, and aggregate reporting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import LengthMismatch, ShapeMismatch, SingleClassGT


def iou_dsc(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Intersection-over-union and Dice coefficient of two binary masks.

    Both-empty masks score (1, 1): a correct empty prediction is rewarded.
    """
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
    inter = np.count_nonzero(pred & gt)
    p, g = np.count_nonzero(pred), np.count_nonzero(gt)
    union = p + g - inter
    if union == 0:
        return 1.0, 1.0
    return inter / union, 2.0 * inter / (p + g)


def auc(pred_scores: np.ndarray, gt: np.ndarray) -> float:
    """Rank-based ROC AUC: probability a random foreground pixel outranks a
    random background pixel, ties counted half."""
    scores = np.asarray(pred_scores, dtype=np.float64).ravel()
    labels = np.asarray(gt).astype(bool).ravel()
    if scores.shape != labels.shape:
        raise ShapeMismatch(f"scores {scores.shape} vs gt {labels.shape}")
    n_pos = np.count_nonzero(labels)
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassGT("ground truth must contain both classes")
    ranks = stats.rankdata(scores)
    return (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def paired_ttest(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Two-sided paired t-test p-value plus a degeneracy flag.

    Zero-variance differences (including a == b) are degenerate; the p-value
    is reported as 1.0 with the flag set rather than raising.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"a {a.shape} vs b {b.shape}")
    if a.size < 2:
        raise LengthMismatch("need at least 2 paired samples")
    diff = a - b
    if np.ptp(diff) == 0.0:
        return 1.0, True
    res = stats.ttest_rel(a, b)
    return float(res.pvalue), False


def mcnemar_test(correct_a: np.ndarray, correct_b: np.ndarray) -> float:
    """Exact binomial McNemar p-value on the discordant pairs of two
    correctness vectors."""
    a = np.asarray(correct_a).astype(bool)
    b = np.asarray(correct_b).astype(bool)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"a {a.shape} vs b {b.shape}")
    only_a = int(np.count_nonzero(a & ~b))
    only_b = int(np.count_nonzero(~a & b))
    n = only_a + only_b
    if n == 0:
        return 1.0
    return float(stats.binomtest(min(only_a, only_b), n, 0.5).pvalue)


@dataclass
class SegRecord:
    id: str
    iou: float
    dsc: float
    auc: float | None = None


@dataclass
class SegReport:
    """Per-image records plus aggregate mean/std per metric."""

    records: list[SegRecord] = field(default_factory=list)
    binary_score_degenerate: bool = False  # AUC fed binary masks, not scores
    empty_pair_ids: list[str] = field(default_factory=list)

    def add(self, id: str, pred: np.ndarray, gt: np.ndarray,
            pred_scores: np.ndarray | None = None) -> SegRecord:
        i, d = iou_dsc(pred, gt)
        a = None
        gt_b = np.asarray(gt).astype(bool)
        if gt_b.any() and not gt_b.all():
            if pred_scores is None:
                pred_scores = np.asarray(pred, dtype=np.float64)
                self.binary_score_degenerate = True
            a = auc(pred_scores, gt)
        if not gt_b.any() and not np.asarray(pred).astype(bool).any():
            self.empty_pair_ids.append(id)
        rec = SegRecord(id=id, iou=i, dsc=d, auc=a)
        self.records.append(rec)
        return rec

    def aggregate(self) -> dict:
        out = {}
        for metric in ("iou", "dsc", "auc"):
            vals = [getattr(r, metric) for r in self.records if getattr(r, metric) is not None]
            if vals:
                out[metric] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return out

    def to_csv_rows(self, method: str = "", modality: str = "") -> list[dict]:
        agg = self.aggregate()
        return [
            {
                "method": method,
                "modality": modality,
                "metric": m.upper(),
                "mean": v["mean"],
                "std": v["std"],
            }
            for m, v in agg.items()
        ]
