"""Importance-score predictor and the four-stage training protocol.

The predictor is a 7-feature logistic scorer per mask cell (see
Pipeline.cell_features).  Training uses a soft relaxation of the binary
mask: each BEV column is scaled by the activity-weighted mean score of its
cells, which is linear in the scores and exact at the endpoints (all-ones
scores reproduce the original map, all-zeros give zero).  The hard
threshold / top-k mask replaces the relaxation at inference.

Stages:
  1 task        fit the occupancy head on unpruned features
  2 consistency train the scorer to keep the soft map close to the original
  3 joint       descend the full weighted loss over scorer and head
  4 finetune    fix a top-k mask at the chosen drop ratio, finetune the head
                on hard-pruned features with the performance hinge
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .errors import DataError, DivergenceError, FormatError
from .losses import total_loss
from .pipeline import FramePack, Pipeline
from .taskproxy import TaskHead, iou_soft, iou_soft_grad
from .voxelgrid import MaskGrid

FEATURE_VERSION = 1
N_FEATURES = 8

# steepness of the soft-binarization fed to the sparsity loss; sharp enough
# that the trained zero-fraction tracks the hard mask's
SPARSITY_SHARPNESS = 12.0

_HEAD_LR_SCALE = 100.0  # logistic head tolerates a much larger step than the scorer
SPARSITY_ANNEAL_FACTOR = 8.0  # stage-3 sharpness ramp, soft start to near-hard finish


@dataclass
class PredictorWeights:
    w: np.ndarray  # (7,)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if len(self.w) != N_FEATURES:
            raise DataError(f"predictor expects {N_FEATURES} weights, got {len(self.w)}")
        if not np.all(np.isfinite(self.w)):
            raise DataError("predictor weights must be finite")

    @classmethod
    def zeros(cls) -> "PredictorWeights":
        return cls(np.zeros(N_FEATURES))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -500, 500)))


def score_cells(pw: PredictorWeights, feats: np.ndarray) -> np.ndarray:
    """Per-cell scores sigmoid(w . features); shape of feats minus last axis."""
    return _sigmoid(np.asarray(feats, dtype=np.float64) @ pw.w)


def score_cells_grad(pw: PredictorWeights, feats: np.ndarray) -> np.ndarray:
    """Jacobian d s / d w, shape feats.shape (one weight axis at the end)."""
    s = score_cells(pw, feats)
    return (s * (1.0 - s))[..., None] * np.asarray(feats, dtype=np.float64)


def make_mask(pw: PredictorWeights, feats: np.ndarray, dims, theta: float) -> MaskGrid:
    return MaskGrid.from_scores(dims, score_cells(pw, feats), theta)


def soft_prune_weights(scores: np.ndarray) -> np.ndarray:
    """Per-cell soft weights used during training; the identity on scores."""
    s = np.asarray(scores, dtype=np.float64)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise DataError("scores must lie in [0, 1]")
    return s


# ---------------------------------------------------------------------------
# stacked tensors

@dataclass
class _Stack:
    feats: np.ndarray    # (F, H, W, Z, 7)
    act_norm: np.ndarray  # (F, H, W, Z)
    f0: np.ndarray       # (F, H, W, C)
    s0: np.ndarray       # (F, H, W, C)
    truth: np.ndarray    # (F, H, W) float


def _stack(packs: list[FramePack]) -> _Stack:
    if not packs:
        raise DataError("training requires a non-empty dataset")
    return _Stack(
        feats=np.stack([p.cell_features for p in packs]),
        act_norm=np.stack([p.act_norm for p in packs]),
        f0=np.stack([p.f0_pre for p in packs]),
        s0=np.stack([p.s0 for p in packs]),
        truth=np.stack([p.truth.grid.astype(np.float64) for p in packs]),
    )


def _smooth_batch(values: np.ndarray) -> np.ndarray:
    """3x3 zero-padded mean over the (H, W) axes of a (F, H, W, C) stack."""
    padded = np.pad(values, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(values)
    h, w = values.shape[1], values.shape[2]
    for dy in range(3):
        for dx in range(3):
            out += padded[:, dy:dy + h, dx:dx + w, :]
    return out / 9.0


def _check_finite(loss: float, stage: str) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"{stage}: loss became non-finite ({loss})")


# ---------------------------------------------------------------------------
# objectives (loss + analytic gradient), shared by training and the
# finite-difference tests

def task_objective(weights: np.ndarray, bias: float, maps: np.ndarray,
                   truth: np.ndarray):
    """Mean BCE of the logistic head over stacked maps.

    Returns (loss, grad_weights, grad_bias, probs).
    """
    z = maps @ weights + bias
    p = _sigmoid(z)
    loss = float(np.mean(np.logaddexp(0.0, z) - truth * z))
    resid = (p - truth) / truth.size
    grad_w = np.einsum("fhwc,fhw->c", maps, resid)
    grad_b = float(resid.sum())
    return loss, grad_w, grad_b, p


def consistency_objective(w: np.ndarray, stack: _Stack):
    """Mean squared error between smoothed soft maps and originals.

    Returns (loss, grad_w).
    """
    s = _sigmoid(stack.feats @ w)
    gate = np.sum(stack.act_norm * s, axis=3)
    x = gate[..., None] * stack.f0
    s_soft = _smooth_batch(x)
    diff = s_soft - stack.s0
    loss = float(np.mean(diff ** 2))
    d_soft = 2.0 * diff / diff.size
    d_x = _smooth_batch(d_soft)               # the kernel is self-adjoint
    d_gate = np.sum(d_x * stack.f0, axis=3)
    d_s = d_gate[..., None] * stack.act_norm
    grad_w = np.einsum("fhwz,fhwzk->k", d_s * s * (1.0 - s), stack.feats)
    return loss, grad_w


def sparsity_objective(w: np.ndarray, stack: _Stack, target_ratio: float,
                       theta: float, sharpness: float = SPARSITY_SHARPNESS):
    """Sparsity loss on the sharpened score relaxation, averaged over frames.

    Returns (loss, grad_w, mean_soft_zero_fraction).
    """
    s = _sigmoid(stack.feats @ w)
    m = _sigmoid(sharpness * (s - theta))
    rho = np.mean(1.0 - m, axis=(1, 2, 3))           # per frame
    loss = float(np.mean((rho - target_ratio) ** 2))
    n = m[0].size
    d_m = (-2.0 * (rho - target_ratio) / (n * len(rho)))[:, None, None, None]
    d_s = d_m * sharpness * m * (1.0 - m)
    grad_w = np.einsum("fhwz,fhwzk->k", d_s * s * (1.0 - s), stack.feats)
    return loss, grad_w, float(np.mean(rho))


def joint_objective(w: np.ndarray, head_w: np.ndarray, head_b: float,
                    stack: _Stack, cfg: TrainConfig, p_anchor: np.ndarray,
                    sharpness: float = SPARSITY_SHARPNESS):
    """Full weighted loss of stage 3.

    Returns (LossBreakdown, grad_w, grad_head_w, grad_head_b).
    """
    s = _sigmoid(stack.feats @ w)
    gate = np.sum(stack.act_norm * s, axis=3)
    x = gate[..., None] * stack.f0
    s_soft = _smooth_batch(x)

    # task on soft maps
    z = s_soft @ head_w + head_b
    p = _sigmoid(z)
    l_task = float(np.mean(np.logaddexp(0.0, z) - stack.truth * z))
    d_z = (p - stack.truth) / stack.truth.size

    # penalty hinge on soft IoU vs the anchor
    n_frames = len(stack.truth)
    l_pen = 0.0
    d_z_pen = np.zeros_like(d_z)
    for f in range(n_frames):
        p_soft = iou_soft(p[f], stack.truth[f])
        gap = p_anchor[f] - p_soft
        if gap > 0.0:
            l_pen += cfg.lam * gap / n_frames
            d_p = -(cfg.lam / n_frames) * iou_soft_grad(p[f], stack.truth[f])
            d_z_pen[f] = d_p * p[f] * (1.0 - p[f])

    # consistency
    diff = s_soft - stack.s0
    l_cons = float(np.mean(diff ** 2))

    # sparsity on the sharpened relaxation
    m = _sigmoid(sharpness * (s - cfg.theta))
    rho = np.mean(1.0 - m, axis=(1, 2, 3))
    l_sparse = float(np.mean((rho - cfg.target_ratio) ** 2))

    breakdown = total_loss(l_task, l_cons, l_sparse, l_pen,
                           cfg.alpha, cfg.beta, cfg.gamma)

    # backprop into the head
    d_z_total = d_z + cfg.gamma * d_z_pen
    grad_head_w = np.einsum("fhwc,fhw->c", s_soft, d_z_total)
    grad_head_b = float(d_z_total.sum())

    # backprop into the scorer through the soft maps
    d_soft = d_z_total[..., None] * head_w + cfg.alpha * 2.0 * diff / diff.size
    d_x = _smooth_batch(d_soft)
    d_gate = np.sum(d_x * stack.f0, axis=3)
    d_s = d_gate[..., None] * stack.act_norm
    n = m[0].size
    d_m = (-2.0 * (rho - cfg.target_ratio) / (n * n_frames))[:, None, None, None]
    d_s = d_s + cfg.beta * d_m * sharpness * m * (1.0 - m)
    grad_w = np.einsum("fhwz,fhwzk->k", d_s * s * (1.0 - s), stack.feats)
    return breakdown, grad_w, grad_head_w, grad_head_b


# ---------------------------------------------------------------------------
# training stages

def train_stage1_task(packs: list[FramePack], cfg: TrainConfig,
                      init_head: TaskHead | None = None):
    """Fit the occupancy head on unpruned features; returns (head, history)."""
    stack = _stack(packs)
    n_ch = stack.s0.shape[-1]
    head = init_head or TaskHead.zeros(n_ch)
    hw, hb = head.weights.copy(), float(head.bias)
    lr = cfg.learning_rate * _HEAD_LR_SCALE
    history = []
    for epoch in range(cfg.epochs_task):
        loss, gw, gb, _ = task_objective(hw, hb, stack.s0, stack.truth)
        _check_finite(loss, "stage1")
        history.append({"epoch": epoch, "task": loss, "total": loss})
        hw -= lr * gw
        hb -= lr * gb
    return TaskHead(hw, hb), history


def train_stage2_consistency(packs: list[FramePack], cfg: TrainConfig,
                             init_w: PredictorWeights | None = None):
    """Train the scorer on the consistency loss with everything else frozen."""
    stack = _stack(packs)
    w = (init_w or PredictorWeights.zeros()).w.copy()
    history = []
    for epoch in range(cfg.epochs_cons):
        loss, grad = consistency_objective(w, stack)
        _check_finite(loss, "stage2")
        history.append({"epoch": epoch, "cons": loss, "total": loss})
        w -= cfg.learning_rate * grad
    return PredictorWeights(w), history


def train_stage3_joint(packs: list[FramePack], cfg: TrainConfig,
                       init_w: PredictorWeights, init_head: TaskHead):
    """End-to-end descent of the full weighted loss over scorer and head."""
    stack = _stack(packs)
    w = init_w.w.copy()
    hw, hb = init_head.weights.copy(), float(init_head.bias)
    p_anchor = np.array([iou_soft(_sigmoid(stack.s0[f] @ init_head.weights + init_head.bias),
                                  stack.truth[f])
                         for f in range(len(packs))])
    history = []
    for epoch in range(cfg.epochs_joint):
        # anneal the sparsity relaxation toward the hard threshold so the
        # binarized zero fraction tracks the target, not just the soft one
        frac = epoch / max(cfg.epochs_joint - 1, 1)
        sharpness = SPARSITY_SHARPNESS * (1.0 + (SPARSITY_ANNEAL_FACTOR - 1.0) * frac)
        breakdown, gw, ghw, ghb = joint_objective(w, hw, hb, stack, cfg, p_anchor,
                                                  sharpness=sharpness)
        _check_finite(breakdown.total, "stage3")
        rec = {"epoch": epoch}
        rec.update(breakdown.as_dict())
        history.append(rec)
        w -= cfg.learning_rate * gw
        hw -= cfg.learning_rate * _HEAD_LR_SCALE * ghw
        hb -= cfg.learning_rate * _HEAD_LR_SCALE * ghb
    return PredictorWeights(w), TaskHead(hw, hb), history


def topk_masks(pw: PredictorWeights, packs: list[FramePack], dims,
               ratio: float, theta: float) -> list[MaskGrid]:
    """Per-frame hard masks keeping the top (1 - ratio) cells by score."""
    return [MaskGrid.from_topk(dims, score_cells(pw, p.cell_features), ratio, theta)
            for p in packs]


def train_stage4_finetune(packs: list[FramePack], ratio: float, cfg: TrainConfig,
                          pw: PredictorWeights, init_head: TaskHead,
                          pipeline: Pipeline):
    """Fix per-frame top-k masks at the drop ratio, finetune the head on
    hard-pruned features with the task loss plus the performance hinge."""
    if not (0.0 <= ratio < 1.0):
        raise DataError("drop ratio must lie in [0, 1)")
    stack = _stack(packs)
    masks = topk_masks(pw, packs, pipeline.mask_dims, ratio, cfg.theta)
    hard = np.stack([pipeline.masked_maps(p.frame, m)[1].values
                     for p, m in zip(packs, masks)])
    hw, hb = init_head.weights.copy(), float(init_head.bias)
    p_anchor = np.array([iou_soft(_sigmoid(stack.s0[f] @ init_head.weights + init_head.bias),
                                  stack.truth[f])
                         for f in range(len(packs))])
    lr = cfg.learning_rate * _HEAD_LR_SCALE
    n_frames = len(packs)
    history = []
    for epoch in range(cfg.epochs_finetune):
        l_task, gw, gb, p = task_objective(hw, hb, hard, stack.truth)
        l_pen = 0.0
        for f in range(n_frames):
            p_soft = iou_soft(p[f], stack.truth[f])
            gap = p_anchor[f] - p_soft
            if gap > 0.0:
                l_pen += cfg.lam * gap / n_frames
                d_p = -(cfg.lam / n_frames) * iou_soft_grad(p[f], stack.truth[f])
                d_z = d_p * p[f] * (1.0 - p[f])
                gw += np.einsum("hwc,hw->c", hard[f], d_z)
                gb += float(d_z.sum())
        total = l_task + l_pen
        _check_finite(total, "stage4")
        history.append({"epoch": epoch, "task": l_task, "penalty": l_pen, "total": total})
        hw -= lr * gw
        hb -= lr * gb
    return TaskHead(hw, hb), masks, history


# ---------------------------------------------------------------------------
# artifacts

def save_predictor(path, pw: PredictorWeights, theta: float) -> None:
    with open(path, "w") as fh:
        json.dump({"w": [float(x) for x in pw.w], "theta": float(theta),
                   "feature_version": FEATURE_VERSION}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_predictor(path) -> tuple[PredictorWeights, float]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid predictor JSON: {exc}", path=str(path)) from exc
    if doc.get("feature_version") != FEATURE_VERSION:
        raise FormatError(f"unsupported feature_version {doc.get('feature_version')}",
                          path=str(path))
    return PredictorWeights(np.asarray(doc["w"], dtype=np.float64)), float(doc["theta"])


def save_head(path, head: TaskHead) -> None:
    with open(path, "w") as fh:
        json.dump({"weights": [float(x) for x in head.weights],
                   "bias": float(head.bias)}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_head(path) -> TaskHead:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid head JSON: {exc}", path=str(path)) from exc
    return TaskHead(np.asarray(doc["weights"], dtype=np.float64), float(doc["bias"]))


def save_history(path, history: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
