"""Saliency-style mask quality metrics.

All four metrics take a float prediction in [0, 1] and a binary ground
truth of the same shape. Degenerate ground truths (all empty, all full)
take the conventional shortcuts so every score stays inside [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation

_EPS = np.finfo(np.float64).eps

E_MEASURE_LEVELS = 256
F_BETA_SQ = 0.3
S_ALPHA = 0.5


def _validated(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if gt.dtype != bool:
        values = np.unique(gt)
        if not np.all(np.isin(values, (0, 1))):
            raise ContractViolation("ground truth must be binary")
        gt = gt.astype(bool)
    if pred.ndim != 2 or pred.shape != gt.shape:
        raise ContractViolation(
            f"prediction {pred.shape} does not match ground truth {gt.shape}")
    if np.any(pred < 0) or np.any(pred > 1):
        raise ContractViolation("prediction values must lie in [0, 1]")
    return pred, gt


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _validated(pred, gt)
    return float(np.abs(pred - gt.astype(np.float64)).mean())


def adaptive_f_measure(pred: np.ndarray, gt: np.ndarray,
                       beta_sq: float = F_BETA_SQ) -> float:
    """F-score at the adaptive threshold min(2 * mean(pred), 1).

    A zero threshold (an all-zero prediction) binarizes with a strict
    comparison so the empty prediction scores 0 rather than 1.
    """
    pred, gt = _validated(pred, gt)
    tau = min(2.0 * float(pred.mean()), 1.0)
    binary = pred >= tau if tau > 0 else pred > 0
    tp = float(np.logical_and(binary, gt).sum())
    marked = float(binary.sum())
    actual = float(gt.sum())
    precision = tp / marked if marked else 0.0
    recall = tp / actual if actual else 0.0
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom


def _enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> float:
    n = gt.size
    gt_sum = gt.sum()
    b = binary.astype(np.float64)
    if gt_sum == 0:
        enhanced = 1.0 - b
    elif gt_sum == n:
        enhanced = b
    else:
        db = b - b.mean()
        dg = gt.astype(np.float64) - gt.mean()
        align = 2.0 * dg * db / (dg * dg + db * db + _EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(enhanced.sum()) / n


def e_measure(pred: np.ndarray, gt: np.ndarray,
              levels: int = E_MEASURE_LEVELS) -> float:
    """Enhanced-alignment score averaged over evenly spaced thresholds."""
    pred, gt = _validated(pred, gt)
    if levels < 1:
        raise ContractViolation("levels must be positive")
    total = 0.0
    for k in range(1, levels + 1):
        total += _enhanced_alignment(pred >= k / levels, gt)
    return total / levels


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * mean / (mean * mean + 1.0 + std + _EPS)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    mx = float(pred.mean())
    my = float(gt.mean())
    if n > 1:
        vx = float(pred.var(ddof=1))
        vy = float(gt.var(ddof=1))
        cxy = float(((pred - mx) * (gt - my)).sum() / (n - 1))
    else:
        vx = vy = cxy = 0.0
    alpha = 4.0 * mx * my * cxy
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0:
        return alpha / (beta + _EPS)
    if beta == 0:
        return 1.0
    return 0.0


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = S_ALPHA) -> float:
    """Structure score mixing an object term with a four-quadrant
    region term split at the ground-truth centroid.

    The split compares unrounded pixel centers against the centroid, so
    mirroring both inputs mirrors the partition exactly and the score is
    flip-invariant.
    """
    pred, gt = _validated(pred, gt)
    coverage = float(gt.mean())
    if coverage == 0.0:
        return 1.0 - float(pred.mean())
    if coverage == 1.0:
        return float(pred.mean())

    s_object = (coverage * _object_score(pred[gt])
                + (1.0 - coverage) * _object_score((1.0 - pred)[~gt]))

    h, w = gt.shape
    ys, xs = np.nonzero(gt)
    cy = float(ys.mean()) + 0.5
    cx = float(xs.mean()) + 0.5
    top = np.arange(h) + 0.5 <= cy
    left = np.arange(w) + 0.5 <= cx
    s_region = 0.0
    for rows in (top, ~top):
        for cols in (left, ~left):
            sub_gt = gt[np.ix_(rows, cols)]
            if sub_gt.size == 0:
                continue
            sub_pred = pred[np.ix_(rows, cols)]
            s_region += (sub_gt.size / gt.size) * _ssim(sub_pred,
                                                        sub_gt.astype(np.float64))

    return max(alpha * s_object + (1.0 - alpha) * s_region, 0.0)


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; two empties count as 1."""
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise ContractViolation(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


@dataclass(frozen=True)
class MetricsRecord:
    mae: float
    f_beta: float
    e_phi: float
    s_alpha: float


def compute_all(pred: np.ndarray, gt: np.ndarray) -> MetricsRecord:
    return MetricsRecord(mae=mae(pred, gt),
                         f_beta=adaptive_f_measure(pred, gt),
                         e_phi=e_measure(pred, gt),
                         s_alpha=s_measure(pred, gt))


def aggregate(records: Sequence[MetricsRecord]) -> Optional[MetricsRecord]:
    """Entrywise mean; None when there is nothing to aggregate."""
    if not records:
        return None
    return MetricsRecord(
        mae=float(np.mean([r.mae for r in records])),
        f_beta=float(np.mean([r.f_beta for r in records])),
        e_phi=float(np.mean([r.e_phi for r in records])),
        s_alpha=float(np.mean([r.s_alpha for r in records])),
    )
