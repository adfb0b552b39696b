"""Annotator-robust, class-balanced cross-entropy on edge logits.

Pixels are classed by the consensus value y: negatives (y == 0) carry
weight alpha, positives (y > eta) carry weight beta, and controversial
pixels (0 < y <= eta) are ignored entirely.  Losses are summed, not
averaged, over pixels and over the K stage maps plus the fused map.
"""

import enum
from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


class PixelClass(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    IGNORED = "ignored"


class DegenerateMapError(ValueError):
    """Ground truth with no positives or no negatives; callers skip it."""


@dataclass
class LossParams:
    eta: float = 0.5
    lam: float = 1.1

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must be in [0, 1), got {self.eta}")
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")


def classify_pixel(y, eta):
    if not 0.0 <= y <= 1.0:
        raise ValueError(f"consensus value must be in [0, 1], got {y}")
    if y == 0.0:
        return PixelClass.NEGATIVE
    if y <= eta:
        return PixelClass.IGNORED
    return PixelClass.POSITIVE


def classify_map(gt, eta):
    """Vectorized classification: returns (positive, negative) bool masks."""
    y = np.asarray(gt)
    if y.min() < 0 or y.max() > 1:
        raise ValueError("consensus map values must be in [0, 1]")
    neg = y == 0.0
    pos = y > eta
    return pos, neg


def balanced_weights(gt, params):
    """Class-balance coefficients (alpha, beta) for one ground-truth map.

    alpha = lambda * |Y+| / (|Y+| + |Y-|),  beta = |Y-| / (|Y+| + |Y-|);
    ignored pixels are excluded from both counts.
    """
    pos, neg = classify_map(gt, params.eta)
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateMapError(
            f"ground truth has {n_pos} positives and {n_neg} negatives")
    total = n_pos + n_neg
    alpha = params.lam * n_pos / total
    beta = n_neg / total
    return alpha, beta


def _softplus(x):
    # log(1 + e^x), stable for large |x|
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))


def stage_loss(logits, gt, params):
    """Loss and d(loss)/d(logit) for one map against one consensus map.

    Per pixel with P = sigmoid(logit):
      negative: alpha * (-log(1 - P)),  grad alpha * P
      positive: beta * (-log P),        grad beta * (P - 1)
      ignored:  0
    """
    x = np.asarray(logits)
    y = np.asarray(gt)
    if x.shape != y.shape:
        raise ShapeError(f"logits shape {x.shape} != ground truth {y.shape}")
    pos, neg = classify_map(y, params.eta)
    if not pos.any() and not neg.any():
        # every pixel ignored: nothing contributes
        return 0.0, np.zeros_like(x)
    alpha, beta = balanced_weights(y, params)
    p = 1.0 / (1.0 + np.exp(-np.abs(x)))
    p = np.where(x >= 0, p, 1.0 - p)
    loss = (alpha * (neg * _softplus(x)).sum()
            + beta * (pos * _softplus(-x)).sum())
    grad = np.zeros_like(x)
    grad[neg] = alpha * p[neg]
    grad[pos] = beta * (p[pos] - 1.0)
    return float(loss), grad


def total_loss(outputs, gt, params):
    """Sum of the K stage losses plus the fused-map loss.

    Returns (loss, stage_grads, fused_grad); the grads are w.r.t. the
    pre-sigmoid logit maps and are independent across maps.  ``outputs``
    is a SideOutputs with batch size 1.
    """
    y = np.asarray(gt)
    loss = 0.0
    stage_grads = []
    for logit in outputs.stage_logits:
        l, g = stage_loss(logit[0, 0], y, params)
        loss += l
        stage_grads.append(g[None, None])
    fused_grad = None
    if outputs.fused_logit is not None:
        l, g = stage_loss(outputs.fused_logit[0, 0], y, params)
        loss += l
        fused_grad = g[None, None]
    return loss, stage_grads, fused_grad
