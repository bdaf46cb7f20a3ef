"""Desk-scale perception task: per-BEV-cell occupancy prediction.

A logistic head over the fused feature channels predicts whether each BEV
column is occupied by an object footprint.  Hard IoU against the box-derived
truth is the scalar performance P; a soft IoU on probabilities is exposed
for differentiable use inside the training losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Box
from .errors import DimensionMismatchError
from .features import BevFeatureMap
from .voxelgrid import VoxelGridSpec


@dataclass
class OccupancyTruth:
    """Dense (H, W) binary grid; cell occupied iff its center lies in a box footprint."""

    grid: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=bool)


def occupancy_from_boxes(boxes: list[Box], spec: VoxelGridSpec,
                         mask_dims: tuple[int, int, int]) -> OccupancyTruth:
    w, h, _ = mask_dims
    cell_x = (spec.max_corner[0] - spec.min_corner[0]) / w
    cell_y = (spec.max_corner[1] - spec.min_corner[1]) / h
    xs = spec.min_corner[0] + (np.arange(w) + 0.5) * cell_x
    ys = spec.min_corner[1] + (np.arange(h) + 0.5) * cell_y
    gx, gy = np.meshgrid(xs, ys)  # (H, W)
    occupied = np.zeros((h, w), dtype=bool)
    for box in boxes:
        dx = gx - box.center[0]
        dy = gy - box.center[1]
        c, s = np.cos(-box.yaw), np.sin(-box.yaw)
        lx = c * dx - s * dy
        ly = s * dx + c * dy
        # the snap guards boundaries that land an ulp outside the half extent
        occupied |= ((np.abs(lx) <= box.size[0] / 2.0 + 1e-9)
                     & (np.abs(ly) <= box.size[1] / 2.0 + 1e-9))
    return OccupancyTruth(occupied)


@dataclass
class TaskHead:
    """Logistic occupancy head: sigmoid(weights . features + bias)."""

    weights: np.ndarray  # (channels,)
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)

    @classmethod
    def zeros(cls, n_channels: int) -> "TaskHead":
        return cls(np.zeros(n_channels), 0.0)


def predict_logits(head: TaskHead, bev: BevFeatureMap) -> np.ndarray:
    if bev.n_channels != len(head.weights):
        raise DimensionMismatchError(
            f"head expects {len(head.weights)} channels, map has {bev.n_channels}")
    return bev.values @ head.weights + head.bias


def predict_probs(head: TaskHead, bev: BevFeatureMap) -> np.ndarray:
    z = predict_logits(head, bev)
    return 1.0 / (1.0 + np.exp(-z))


def task_loss(head: TaskHead, bev: BevFeatureMap, truth: OccupancyTruth) -> float:
    """Mean binary cross-entropy over cells."""
    z = predict_logits(head, bev)
    if z.shape != truth.grid.shape:
        raise DimensionMismatchError(f"prediction {z.shape} vs truth {truth.grid.shape}")
    t = truth.grid.astype(np.float64)
    # stable log(1 + exp(z)) - t*z
    return float(np.mean(np.logaddexp(0.0, z) - t * z))


def task_loss_grad(head: TaskHead, bev: BevFeatureMap, truth: OccupancyTruth):
    """Gradients of task_loss with respect to (weights, bias)."""
    p = predict_probs(head, bev)
    t = truth.grid.astype(np.float64)
    resid = (p - t) / p.size
    grad_w = np.einsum("hwc,hw->c", bev.values, resid)
    grad_b = float(resid.sum())
    return grad_w, grad_b


def iou_hard(pred: np.ndarray, truth: np.ndarray) -> float:
    """IoU of two binary grids; empty-vs-empty is defined as 1.0."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    union = np.logical_or(pred, truth).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, truth).sum()) / float(union)


def iou_soft(probs: np.ndarray, truth: np.ndarray) -> float:
    """Differentiable IoU: sum(p*t) / sum(p + t - p*t); empty-empty -> 1.0."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    den = float(np.sum(p + t - p * t))
    if den == 0.0:
        return 1.0
    return float(np.sum(p * t)) / den


def iou_soft_grad(probs: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Gradient of iou_soft with respect to the probabilities."""
    p = np.asarray(probs, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    num = float(np.sum(p * t))
    den = float(np.sum(p + t - p * t))
    if den == 0.0:
        return np.zeros_like(p)
    return (t * den - num * (1.0 - t)) / den ** 2


def performance(head: TaskHead, bev: BevFeatureMap, truth: OccupancyTruth,
                threshold: float = 0.5) -> float:
    """Hard IoU between the thresholded prediction and the truth."""
    return iou_hard(predict_probs(head, bev) >= threshold, truth.grid)
