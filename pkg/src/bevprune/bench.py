"""Operation-count cost model and the prune-ratio sweep harness.

Cost is counted, not estimated: the feature extractors tally exactly one
``c_voxel`` per retained voxel block they aggregate and one ``c_patch``
per kept patch per depth bin, plus a fixed per-frame predictor overhead.
An independent recount from the mask and kept-patch list must agree with
the tallies; the sweep records that check per frame.

The sweep evaluates the trained predictor's top-k mask and a seeded
random mask at every drop ratio, reporting mean cost, cost reduction
versus ratio 0, and mean task performance (IoU).  Wall-clock numbers go
to a separate timing dict so the report itself is byte-reproducible.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import BenchConfig
from .errors import DataError
from .pipeline import FramePack, Pipeline
from .predictor import PredictorWeights, score_cells
from .rng import Stream
from .taskproxy import TaskHead, performance, task_loss
from .voxelgrid import MaskGrid


@dataclass(frozen=True)
class CostModel:
    c_voxel: float
    c_patch: float
    c_predictor: float

    @classmethod
    def from_config(cls, cfg: BenchConfig) -> "CostModel":
        return cls(cfg.c_voxel, cfg.c_patch, cfg.c_predictor)


class CostCounter:
    """Exact tallies incremented by the feature extractors."""

    def __init__(self):
        self.lidar_blocks = 0
        self.patch_bins = 0

    def add_lidar_blocks(self, n: int) -> None:
        self.lidar_blocks += int(n)

    def add_patch_bins(self, n: int) -> None:
        self.patch_bins += int(n)


def counted_cost(counter: CostCounter, model: CostModel) -> float:
    return (counter.lidar_blocks * model.c_voxel
            + counter.patch_bins * model.c_patch
            + model.c_predictor)


def recount_cost(mask: MaskGrid, kept_patches, n_bins: int, model: CostModel) -> float:
    """Independent recomputation of the frame cost from mask and kept set."""
    return (int(mask.mask.sum()) * model.c_voxel
            + len(kept_patches) * n_bins * model.c_patch
            + model.c_predictor)


def random_mask(dims, ratio: float, seed: int, theta: float = 0.5) -> MaskGrid:
    """Seeded uniform-random mask with round(ratio * N) zero cells."""
    if not (0.0 <= ratio <= 1.0):
        raise DataError("ratio must lie in [0, 1]")
    w, h, z = dims
    n = w * h * z
    ranks = Stream(seed).uniform(n)
    n_zero = int(round(ratio * n))
    flat = np.ones(n, dtype=bool)
    flat[np.argsort(ranks, kind="stable")[:n_zero]] = False
    scores = flat.astype(np.float64)
    return MaskGrid(dims, scores.reshape(h, w, z), flat.reshape(h, w, z), theta)


def _eval_frame(pipeline: Pipeline, pack: FramePack, frame_idx: int,
                ratios, pw: PredictorWeights, head: TaskHead,
                model: CostModel, theta: float, seed: int) -> list[dict]:
    """Per-ratio metrics for one frame (predictor mask and random baseline)."""
    scores = score_cells(pw, pack.cell_features)
    out = []
    for ratio in ratios:
        mask = MaskGrid.from_topk(pipeline.mask_dims, scores, ratio, theta)
        counter = CostCounter()
        _, fused, outcome = pipeline.masked_maps(pack.frame, mask, counter)
        fmap = pipeline.fused_map(fused.values)
        cost = counted_cost(counter, model)
        recount = recount_cost(mask, outcome.kept_patch_indices, pipeline.fp.n_bins, model)
        rseed = Stream(seed).derive(f"random_mask_{frame_idx}_{ratio:.3f}").seed
        rmask = random_mask(pipeline.mask_dims, ratio, rseed, theta)
        _, rfused, _ = pipeline.masked_maps(pack.frame, rmask)
        out.append({
            "ratio": float(ratio),
            "cost": cost,
            "recount_ok": cost == recount,
            "iou": performance(head, fmap, pack.truth),
            "iou_random": performance(head, pipeline.fused_map(rfused.values), pack.truth),
            "task_loss": task_loss(head, fmap, pack.truth),
            "prune_ratio_points": outcome.prune_ratio_points,
            "prune_ratio_patches": outcome.prune_ratio_patches,
        })
    return out


def run_sweep(pipeline: Pipeline, packs: list[FramePack], pw: PredictorWeights,
              head: TaskHead, bench_cfg: BenchConfig, theta: float, seed: int,
              jobs: int = 1):
    """Sweep the drop ratio over the dataset; returns (report, timing)."""
    if not packs:
        raise DataError("sweep requires a non-empty dataset")
    ratios = [float(r) for r in bench_cfg.ratios]
    model = CostModel.from_config(bench_cfg)
    t0 = time.perf_counter()
    args = [(pipeline, pack, i, ratios, pw, head, model, theta, seed)
            for i, pack in enumerate(packs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_frame = list(pool.map(_eval_frame_star, args))
    else:
        per_frame = [_eval_frame(*a) for a in args]
    wall_ms = (time.perf_counter() - t0) * 1000.0

    per_ratio = []
    base_cost = None
    for j, ratio in enumerate(ratios):
        rows = [frame_rows[j] for frame_rows in per_frame]
        mean_cost = float(np.mean([r["cost"] for r in rows]))
        if ratio == 0.0 or base_cost is None:
            base_cost = mean_cost if ratio == 0.0 else base_cost
        per_ratio.append({
            "ratio": ratio,
            "mean_cost": mean_cost,
            "mean_iou": float(np.mean([r["iou"] for r in rows])),
            "mean_iou_random": float(np.mean([r["iou_random"] for r in rows])),
            "mean_task_loss": float(np.mean([r["task_loss"] for r in rows])),
            "mean_prune_ratio_points": float(np.mean([r["prune_ratio_points"] for r in rows])),
            "mean_prune_ratio_patches": float(np.mean([r["prune_ratio_patches"] for r in rows])),
            "recount_ok": all(r["recount_ok"] for r in rows),
        })
    if base_cost is None:
        base_cost = max(r["mean_cost"] for r in per_ratio)
    for row in per_ratio:
        row["cost_reduction"] = 1.0 - row["mean_cost"] / base_cost if base_cost else 0.0
    report = {
        "seed": int(seed),
        "n_frames": len(packs),
        "ratios": ratios,
        "cost_model": {"c_voxel": model.c_voxel, "c_patch": model.c_patch,
                       "c_predictor": model.c_predictor},
        "per_ratio": per_ratio,
    }
    timing = {"wall_clock_ms": wall_ms, "jobs": jobs}
    return report, timing


def _eval_frame_star(args):
    return _eval_frame(*args)
