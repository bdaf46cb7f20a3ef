"""Cost counting, the recount oracle, and the sweep harness."""

import numpy as np
import pytest

from bevprune.bench import (CostCounter, CostModel, counted_cost, random_mask,
                            recount_cost, run_sweep)
from bevprune.config import BenchConfig, RunConfig, SceneConfig, TrainConfig
from bevprune.data import generate_scene
from bevprune.errors import DataError
from bevprune.pipeline import Pipeline
from bevprune.predictor import (N_FEATURES, PredictorWeights,
                                train_stage1_task)
from bevprune.rng import Stream
from bevprune.taskproxy import TaskHead
from bevprune.voxelgrid import MaskGrid


def small_pipe():
    cfg = RunConfig()
    cfg.scene = SceneConfig(n_azimuth=120, n_elevation=16)
    return Pipeline(cfg)


def test_cost_model_from_config():
    model = CostModel.from_config(BenchConfig())
    assert (model.c_voxel, model.c_patch, model.c_predictor) == (4.0, 1.0, 64.0)


def test_counted_cost_arithmetic():
    counter = CostCounter()
    counter.add_lidar_blocks(10)
    counter.add_patch_bins(7)
    model = CostModel(4.0, 1.0, 64.0)
    assert counted_cost(counter, model) == 10 * 4.0 + 7 * 1.0 + 64.0


def test_counters_match_recount_on_masked_frames():
    """The extractor tallies equal the independent mask-based recount."""
    pipe = small_pipe()
    model = CostModel.from_config(BenchConfig())
    s = Stream(60)
    for k in range(5):
        frame = generate_scene(pipe.cfg.scene, 200 + k, pipe.cfg.camera)
        w, h, z = pipe.mask_dims
        mask = MaskGrid.from_scores(pipe.mask_dims,
                                    s.uniform(w * h * z).reshape(h, w, z), 0.5)
        counter = CostCounter()
        _, _, outcome = pipe.masked_maps(frame, mask, counter)
        assert counted_cost(counter, model) == recount_cost(
            mask, outcome.kept_patch_indices, pipe.fp.n_bins, model)


def test_full_frame_cost_is_max():
    pipe = small_pipe()
    model = CostModel.from_config(BenchConfig())
    frame = generate_scene(pipe.cfg.scene, 61, pipe.cfg.camera)
    counter = CostCounter()
    pipe.original_maps(frame, counter)
    n_blocks = int(np.prod(pipe.mask_dims))
    expect = (n_blocks * model.c_voxel
              + pipe.pg.n_patches * pipe.fp.n_bins * model.c_patch
              + model.c_predictor)
    assert counted_cost(counter, model) == expect


def test_random_mask_exact_ratio_and_determinism():
    dims = (32, 32, 4)
    n = int(np.prod(dims))
    for ratio in (0.0, 0.3, 0.5, 1.0):
        a = random_mask(dims, ratio, 77)
        b = random_mask(dims, ratio, 77)
        assert np.array_equal(a.mask, b.mask)
        assert int((~a.mask).sum()) == int(round(ratio * n))
    assert not np.array_equal(random_mask(dims, 0.5, 1).mask,
                              random_mask(dims, 0.5, 2).mask)
    with pytest.raises(DataError):
        random_mask(dims, 1.5, 0)


def _sweep_setup(n_frames=4):
    pipe = small_pipe()
    packs = [pipe.frame_pack(generate_scene(pipe.cfg.scene, 300 + i, pipe.cfg.camera))
             for i in range(n_frames)]
    cfg = TrainConfig(epochs_task=300, epochs_cons=0, epochs_joint=0,
                      epochs_finetune=0)
    head, _ = train_stage1_task(packs, cfg)
    pw = PredictorWeights(0.05 * Stream(62).normal(N_FEATURES))
    return pipe, packs, pw, head


def test_sweep_report_shape_and_recount():
    pipe, packs, pw, head = _sweep_setup()
    bench = BenchConfig(ratios=(0.0, 0.25, 0.5))
    report, timing = run_sweep(pipe, packs, pw, head, bench, 0.5, 42)
    assert report["n_frames"] == len(packs)
    assert [r["ratio"] for r in report["per_ratio"]] == [0.0, 0.25, 0.5]
    assert all(r["recount_ok"] for r in report["per_ratio"])
    assert report["per_ratio"][0]["cost_reduction"] == 0.0
    assert "wall_clock_ms" in timing


def test_sweep_cost_monotone_nonincreasing():
    pipe, packs, pw, head = _sweep_setup()
    report, _ = run_sweep(pipe, packs, pw, head, BenchConfig(), 0.5, 42)
    costs = [r["mean_cost"] for r in report["per_ratio"]]
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))
    reds = [r["cost_reduction"] for r in report["per_ratio"]]
    assert all(b >= a - 1e-9 for a, b in zip(reds, reds[1:]))


def test_sweep_deterministic_report():
    pipe, packs, pw, head = _sweep_setup(2)
    bench = BenchConfig(ratios=(0.0, 0.5))
    a, _ = run_sweep(pipe, packs, pw, head, bench, 0.5, 42)
    b, _ = run_sweep(pipe, packs, pw, head, bench, 0.5, 42)
    assert a == b


def test_sweep_rejects_empty():
    pipe, packs, pw, head = _sweep_setup(1)
    with pytest.raises(DataError):
        run_sweep(pipe, [], pw, head, BenchConfig(), 0.5, 42)
