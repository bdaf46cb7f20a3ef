"""Training loss components: consistency, sparsity, penalty, weighted total.

The consistency loss is a mean (not a raw sum) of squared differences so
its scale is independent of grid resolution.  The sparsity loss accepts
either a hard binary mask or soft scores; the formula is identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatchError
from .features import BevFeatureMap


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    cons: float
    sparse: float
    penalty: float
    total: float

    def as_dict(self) -> dict:
        return {"task": self.task, "cons": self.cons, "sparse": self.sparse,
                "penalty": self.penalty, "total": self.total}


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, BevFeatureMap) else np.asarray(m, dtype=np.float64)


def consistency_loss(original, pruned) -> float:
    """Mean squared element difference between the two feature maps."""
    a, b = _values(original), _values(pruned)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"map shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def consistency_loss_grad(original, pruned) -> np.ndarray:
    """Gradient of consistency_loss with respect to the pruned map."""
    a, b = _values(original), _values(pruned)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"map shapes differ: {a.shape} vs {b.shape}")
    return 2.0 * (b - a) / a.size


def sparsity_loss(mask_or_scores, target_ratio: float) -> float:
    """(zero_fraction - target)^2 where zero_fraction = sum(1 - m) / N."""
    m = np.asarray(mask_or_scores, dtype=np.float64)
    if m.size == 0:
        raise DataError("sparsity loss over an empty mask is undefined")
    if not (0.0 <= target_ratio <= 1.0):
        raise DataError("target ratio must lie in [0, 1]")
    zero_fraction = float(np.sum(1.0 - m)) / m.size
    return (zero_fraction - target_ratio) ** 2


def sparsity_loss_grad(mask_or_scores, target_ratio: float) -> np.ndarray:
    """Gradient with respect to the (soft) mask values."""
    m = np.asarray(mask_or_scores, dtype=np.float64)
    if m.size == 0:
        raise DataError("sparsity loss over an empty mask is undefined")
    zero_fraction = float(np.sum(1.0 - m)) / m.size
    return np.full_like(m, -2.0 * (zero_fraction - target_ratio) / m.size)


def penalty_loss(p_original: float, p_masked: float, lam: float) -> float:
    """Hinge on performance degradation: lam * max(0, P_original - P_masked)."""
    if lam < 0:
        raise DataError("lambda must be >= 0")
    return lam * max(0.0, p_original - p_masked)


def total_loss(task: float, cons: float, sparse: float, penalty: float,
               alpha: float, beta: float, gamma: float) -> LossBreakdown:
    """Weighted sum of the four components."""
    if min(alpha, beta, gamma) < 0:
        raise DataError("loss weights must be >= 0")
    total = task + alpha * cons + beta * sparse + gamma * penalty
    return LossBreakdown(task=float(task), cons=float(cons), sparse=float(sparse),
                         penalty=float(penalty), total=float(total))
