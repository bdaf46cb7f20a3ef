"""End-to-end acceptance suite.

Each test prints exactly one "criterion N: PASS/FAIL" line (written past
pytest's capture so it shows up in normal runs) and asserts the property
with pinned tolerances.  Criteria 6 through 9 share one session fixture
that runs the full CLI pipeline (gen, four training stages, bench) twice
on 50 scenes with the default configuration and seed.
"""

import dataclasses
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from bevprune.config import RunConfig
from bevprune.data import read_scene, scene_dirs
from bevprune.geometry import (Pose, invert_pose, project_points,
                               transform_points, unproject_points)
from bevprune.losses import penalty_loss, sparsity_loss, total_loss
from bevprune.pipeline import Pipeline
from bevprune.predictor import (N_FEATURES, PredictorWeights, _stack,
                                consistency_objective, load_predictor,
                                score_cells, score_cells_grad,
                                sparsity_objective, topk_masks,
                                train_stage1_task, train_stage2_consistency,
                                train_stage3_joint)
from bevprune.projection import index_multiply_camera, index_multiply_lidar
from bevprune.rng import Stream
from bevprune.taskproxy import OccupancyTruth, TaskHead, task_loss, task_loss_grad
from bevprune.voxelgrid import MaskGrid, load_mask, save_mask

GOLDEN = Path(__file__).parent / "golden"

ARTIFACT_NAMES = ("stage1_head.json", "stage2_predictor.json",
                  "stage3_predictor.json", "stage3_head.json",
                  "stage4_head.json", "stage4_meta.json")


def verdict(capsys, n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'} - {detail}"
    # print past pytest's fd capture so every run shows the verdict line
    with capsys.disabled():
        print(line)
    assert passed, line


# ---------------------------------------------------------------------------
# shared full-pipeline runs (criteria 6-9)

def _run_cli(*argv) -> None:
    cmd = [sys.executable, "-m", "bevprune.cli", *argv]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    if proc.returncode != 0:
        raise AssertionError(
            f"CLI failed ({proc.returncode}): {' '.join(cmd)}\n{proc.stderr}")


def _full_pipeline(root: Path) -> None:
    data, art, bench = str(root / "data"), str(root / "art"), str(root / "bench")
    _run_cli("gen", "--scenes", "50", "--out", data)
    for stage in ("task", "cons", "joint", "finetune"):
        _run_cli("train", "--stage", stage, "--data", data, "--out", art)
    _run_cli("bench", "--data", data, "--artifacts", art, "--out", bench)


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    _full_pipeline(root / "run_a")
    _full_pipeline(root / "run_b")
    elapsed = time.perf_counter() - t0
    report = json.loads((root / "run_a" / "bench" / "report.json").read_text())
    return {"root": root, "run_a": root / "run_a", "run_b": root / "run_b",
            "elapsed": elapsed, "report": report}


def _packs(run_dir: Path, pipeline: Pipeline, n: int):
    dirs = scene_dirs(run_dir / "data")[:n]
    return [pipeline.frame_pack(read_scene(d)) for d in dirs]


# ---------------------------------------------------------------------------
# criterion 1: geometry round trips

def test_criterion_01_geometry(capsys):
    t0 = time.perf_counter()
    s = Stream(101)
    worst = 0.0
    n = 10000
    # pose round trip
    m = s.normal(9 * 4).reshape(4, 3, 3)
    for rot in m:
        q, r = np.linalg.qr(rot)
        q *= np.sign(np.diag(r))
        if np.linalg.det(q) < 0:
            q[:, 0] = -q[:, 0]
        pose = Pose(q, s.normal(3))
        pts = s.normal(3 * n).reshape(n, 3)
        back = transform_points(invert_pose(pose), transform_points(pose, pts))
        worst = max(worst, float(np.abs(back - pts).max()))
    # projection round trip on the default camera
    cam = RunConfig().camera.model()
    u = s.uniform_in(0.0, cam.width - 1e-6, n)
    v = s.uniform_in(0.0, cam.height - 1e-6, n)
    d = s.uniform_in(0.5, 20.0, n)
    pts = unproject_points(cam, u, v, d)
    u2, v2, d2, valid = project_points(cam, pts)
    assert bool(valid.all())
    worst = max(worst,
                float(np.abs(u2 - u).max() / cam.fx * d.max()),
                float(np.abs(d2 - d).max()))
    back = unproject_points(cam, u2, v2, d2)
    worst = max(worst, float(np.abs(back - pts).max()))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 1, worst < 1e-9 and elapsed < 5.0,
            f"round-trip max error {worst:.2e} over {5 * n} samples in {elapsed:.2f}s "
            "(tolerance 1e-9, budget 5s)")


# ---------------------------------------------------------------------------
# criterion 2: loss fixtures

def test_criterion_02_losses(capsys):
    ok = True
    tol = 1e-12
    ok &= abs(sparsity_loss(np.ones(64), 0.5) - 0.25) < tol
    ok &= abs(sparsity_loss(np.concatenate([np.ones(32), np.zeros(32)]), 0.5)) < tol
    ok &= abs(sparsity_loss(np.full(100, 0.75), 0.25)) < tol
    ok &= penalty_loss(0.5, 0.9, 2.0) == 0.0
    ok &= abs(penalty_loss(0.8, 0.6, 2.0) - 0.4) < tol
    ok &= total_loss(0, 0, 0, 0, 1, 1, 1).total == 0.0
    ok &= abs(total_loss(1, 2, 3, 4, 1, 1, 1).total - 10.0) < tol
    ok &= abs(total_loss(1, 2, 3, 4, 0.5, 0.1, 0.2).total - 3.1) < tol
    s = Stream(102)
    brute_ok = True
    for _ in range(100):
        m = (s.uniform(128) < 0.6).astype(float)
        r = s.uniform()
        zero_frac = (m.size - m.sum()) / m.size
        brute_ok &= abs(sparsity_loss(m, r) - (zero_frac - r) ** 2) < tol
    verdict(capsys, 2, ok and brute_ok,
            "zero cases and arithmetic fixtures exact at 1e-12; "
            "sparsity equals brute force on 100 random masks")


# ---------------------------------------------------------------------------
# criterion 3: index-multiplier oracle

def _oracle_keep(pipe, pts, mask):
    """Keep decision recomputed from raw arithmetic, no package helpers.

    Voxel indexing follows the documented rule (exact-arithmetic floor of
    (p - min)/voxel, upper bound exclusive); the 1e-9 nudge realizes the
    exact floor for quotients sitting one float ulp below an integer.
    """
    mn = np.asarray(pipe.spec.min_corner, float)
    vs = np.asarray(pipe.spec.voxel_size, float)
    dims = np.asarray(pipe.spec.dims)
    idx = np.floor((pts[:, :3] - mn) / vs + 1e-9).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < dims), axis=1)
    bx, by, bz = pipe.bm.block
    keep = np.zeros(len(pts), bool)
    sub = idx[inside]
    keep[inside] = mask.mask[sub[:, 1] // by, sub[:, 0] // bx, sub[:, 2] // bz]
    return keep


def test_criterion_03_index_multiplier(capsys, pipeline_runs):
    pipe = Pipeline(RunConfig())
    packs = _packs(pipeline_runs["run_a"], pipe, 20)
    s = Stream(103)
    w, h, z = pipe.mask_dims
    bx, by, bz = pipe.bm.block
    ok = True
    for pack in packs:
        pts = np.asarray(pack.frame.points, float).reshape(-1, 4)
        for _ in range(20):
            mask = MaskGrid.from_scores(pipe.mask_dims,
                                        s.uniform(w * h * z).reshape(h, w, z), 0.5)
            kept = index_multiply_lidar(mask, pipe.bm, pipe.spec, pts)
            expect = np.nonzero(_oracle_keep(pipe, pts, mask))[0]
            ok &= np.array_equal(kept, expect)
            kept_patches = index_multiply_camera(mask, pipe.bm, pipe.fp)
            expect_patches = [
                pid for pid, rows in enumerate(pipe.fp.entries)
                if len(rows) and bool(mask.mask[rows[:, 1] // by, rows[:, 0] // bx,
                                                rows[:, 2] // bz].any())]
            ok &= kept_patches == expect_patches
    mono_ok = True
    pts = np.asarray(packs[0].frame.points, float).reshape(-1, 4)
    for _ in range(50):
        a = s.uniform(w * h * z)
        small = MaskGrid.from_scores(pipe.mask_dims, a.reshape(h, w, z), 0.7)
        big = MaskGrid.from_scores(pipe.mask_dims,
                                   np.maximum(a, s.uniform(w * h * z)).reshape(h, w, z), 0.7)
        ks = set(index_multiply_lidar(small, pipe.bm, pipe.spec, pts).tolist())
        kb = set(index_multiply_lidar(big, pipe.bm, pipe.spec, pts).tolist())
        mono_ok &= ks <= kb
        mono_ok &= (set(index_multiply_camera(small, pipe.bm, pipe.fp))
                    <= set(index_multiply_camera(big, pipe.bm, pipe.fp)))
    verdict(capsys, 3, ok and mono_ok,
            "kept points/patches equal brute force on 20 frames x 20 masks; "
            "monotone on 50 mask pairs")


# ---------------------------------------------------------------------------
# criterion 4: consistency invariant

def test_criterion_04_consistency_invariant(capsys, pipeline_runs):
    pipe = Pipeline(RunConfig())
    packs = _packs(pipeline_runs["run_a"], pipe, 20)
    s = Stream(104)
    w, h, z = pipe.mask_dims
    ok = True
    for pack in packs:
        mask = MaskGrid.from_scores(pipe.mask_dims,
                                    s.uniform(w * h * z).reshape(h, w, z), 0.5)
        pre, _, _ = pipe.masked_maps(pack.frame, mask)
        col_all = mask.mask.all(axis=2)
        col_none = ~mask.mask.any(axis=2)
        ok &= bool(np.array_equal(pre.values[col_all], pack.f0_pre[col_all]))
        ok &= bool(np.all(pre.values[col_none] == 0.0))
    verdict(capsys, 4, ok, "pre-smoothing masked map exact on fully retained columns, "
                   "exactly zero on fully pruned columns (20 frames)")


# ---------------------------------------------------------------------------
# criterion 5: gradient checks

def _rel_err(fd, an):
    if abs(fd) < 1e-12:
        return abs(an)
    return abs(fd - an) / abs(fd)


def test_criterion_05_gradients(capsys):
    cfg = RunConfig()
    cfg.scene = dataclasses.replace(cfg.scene, n_azimuth=90, n_elevation=12)
    pipe = Pipeline(cfg)
    from bevprune.data import generate_scene
    packs = [pipe.frame_pack(generate_scene(cfg.scene, 900 + i, cfg.camera))
             for i in range(2)]
    stack = _stack(packs)
    s = Stream(105)
    eps = 1e-6
    worst = 0.0
    for _ in range(5):
        w = 0.3 * s.normal(N_FEATURES)
        # predictor scorer jacobian
        feats = stack.feats[0, :4, :4]
        jac = score_cells_grad(PredictorWeights(w), feats)
        k = int(s.randint(0, N_FEATURES))
        wp, wm = w.copy(), w.copy()
        wp[k] += eps
        wm[k] -= eps
        fd = (score_cells(PredictorWeights(wp), feats)
              - score_cells(PredictorWeights(wm), feats)) / (2 * eps)
        worst = max(worst, float(np.abs(fd - jac[..., k]).max()))
        # consistency
        _, grad = consistency_objective(w, stack)
        fd = (consistency_objective(wp, stack)[0]
              - consistency_objective(wm, stack)[0]) / (2 * eps)
        worst = max(worst, _rel_err(fd, grad[k]))
        # sparsity
        _, grad, _ = sparsity_objective(w, stack, 0.4, 0.5)
        fd = (sparsity_objective(wp, stack, 0.4, 0.5)[0]
              - sparsity_objective(wm, stack, 0.4, 0.5)[0]) / (2 * eps)
        worst = max(worst, _rel_err(fd, grad[k]))
        # task loss
        head = TaskHead(s.normal(stack.s0.shape[-1]), 0.1 * float(s.normal(1)[0]))
        bev = pipe.fused_map(packs[0].s0)
        gw, gb = task_loss_grad(head, bev, packs[0].truth)
        j = int(s.randint(0, len(head.weights)))
        hp, hm = head.weights.copy(), head.weights.copy()
        hp[j] += eps
        hm[j] -= eps
        fd = (task_loss(TaskHead(hp, head.bias), bev, packs[0].truth)
              - task_loss(TaskHead(hm, head.bias), bev, packs[0].truth)) / (2 * eps)
        worst = max(worst, _rel_err(fd, gw[j]))
        fd_b = (task_loss(TaskHead(head.weights, head.bias + eps), bev, packs[0].truth)
                - task_loss(TaskHead(head.weights, head.bias - eps), bev, packs[0].truth)) / (2 * eps)
        worst = max(worst, _rel_err(fd_b, gb))
    verdict(capsys, 5, worst < 1e-4,
            f"predictor/consistency/sparsity/task gradients vs central differences, "
            f"worst relative error {worst:.2e} at 5 random points (tolerance 1e-4)")


# ---------------------------------------------------------------------------
# criterion 6: sparsity targeting

def test_criterion_06_sparsity_targeting(capsys, pipeline_runs):
    pipe = Pipeline(RunConfig())
    packs = _packs(pipeline_runs["run_a"], pipe, 16)
    base = RunConfig().train
    head, _ = train_stage1_task(packs, base)
    pw0, _ = train_stage2_consistency(packs, base)
    deltas = {}
    for r in (0.3, 0.5):
        cfg = dataclasses.replace(base, alpha=0.0, gamma=0.0, target_ratio=r)
        pw, _, _ = train_stage3_joint(packs, cfg, pw0, head)
        zf = float(np.mean([
            MaskGrid.from_scores(pipe.mask_dims,
                                 score_cells(pw, p.cell_features), cfg.theta).zero_fraction
            for p in packs]))
        deltas[r] = abs(zf - r)
    targeting_ok = all(d <= 0.05 for d in deltas.values())

    pw3, _ = load_predictor(pipeline_runs["run_a"] / "art" / "stage3_predictor.json")
    n = int(np.prod(pipe.mask_dims))
    topk_ok = True
    for r in (0.3, 0.5):
        for mask in topk_masks(pw3, packs[:8], pipe.mask_dims, r, base.theta):
            topk_ok &= abs(mask.zero_fraction - r) <= 1.0 / n + 1e-12
    verdict(capsys, 6, targeting_ok and topk_ok,
            f"beta-dominant |zf - r| = {deltas[0.3]:.3f} (r=0.3), {deltas[0.5]:.3f} (r=0.5) "
            f"<= 0.05; top-k masks within 1/{n} of the ratio")


# ---------------------------------------------------------------------------
# criterion 7: counted cost reduction

def test_criterion_07_cost(capsys, pipeline_runs):
    rows = pipeline_runs["report"]["per_ratio"]
    by_ratio = {round(r["ratio"], 3): r for r in rows}
    reduction = by_ratio[0.5]["cost_reduction"]
    costs = [r["mean_cost"] for r in rows]
    monotone = all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))
    recount = all(r["recount_ok"] for r in rows)
    verdict(capsys, 7, reduction >= 0.40 and monotone and recount,
            f"cost reduction at r=0.5 is {reduction:.1%} (>= 40%); cost monotone "
            f"non-increasing; every frame matches the recount oracle")


# ---------------------------------------------------------------------------
# criterion 8: quality under pruning

def test_criterion_08_quality(capsys, pipeline_runs):
    rows = pipeline_runs["report"]["per_ratio"]
    ious = [r["mean_iou"] for r in rows]
    rands = [r["mean_iou_random"] for r in rows]
    by_ratio = {round(r["ratio"], 3): r for r in rows}
    drop = ious[0] - by_ratio[0.5]["mean_iou"]
    drop_rand = rands[0] - by_ratio[0.5]["mean_iou_random"]
    inversions = [b - a for a, b in zip(ious, ious[1:]) if b > a + 1e-9]
    mono_ok = len(inversions) <= 1 and all(d <= 0.005 for d in inversions)
    verdict(capsys, 8, drop <= 0.05 and drop < drop_rand and mono_ok,
            f"IoU drop at r=0.5 is {drop * 100:.2f} points (<= 5) and below the random "
            f"baseline's {drop_rand * 100:.2f}; sweep non-increasing to r=0.6 "
            f"({len(inversions)} inversion(s), allowed one <= 0.5 point)")


# ---------------------------------------------------------------------------
# criterion 9: determinism and wall clock

def test_criterion_09_determinism(capsys, pipeline_runs):
    run_a, run_b = pipeline_runs["run_a"], pipeline_runs["run_b"]
    same = ((run_a / "bench" / "report.json").read_bytes()
            == (run_b / "bench" / "report.json").read_bytes())
    for name in ARTIFACT_NAMES:
        same &= ((run_a / "art" / name).read_bytes()
                 == (run_b / "art" / name).read_bytes())
    elapsed = pipeline_runs["elapsed"]
    verdict(capsys, 9, same and elapsed < 600.0,
            f"two seed-42 pipeline runs byte-identical (report + 6 artifacts) "
            f"in {elapsed:.0f}s total (< 600s)")


# ---------------------------------------------------------------------------
# criterion 10: golden formats

def test_criterion_10_goldens(capsys, tmp_path):
    from bevprune.data import (read_image_pgm, read_pointcloud,
                               write_image_pgm, write_pointcloud)
    from bevprune.geometry import load_calib, save_calib
    ok = True
    pts = read_pointcloud(GOLDEN / "points.bin")
    write_pointcloud(tmp_path / "points.bin", pts)
    ok &= (tmp_path / "points.bin").read_bytes() == (GOLDEN / "points.bin").read_bytes()

    img = read_image_pgm(GOLDEN / "image.pgm")
    write_image_pgm(tmp_path / "image.pgm", img)
    ok &= (tmp_path / "image.pgm").read_bytes() == (GOLDEN / "image.pgm").read_bytes()

    cam = load_calib(GOLDEN / "calib.json")
    save_calib(tmp_path / "calib.json", cam)
    ok &= (tmp_path / "calib.json").read_bytes() == (GOLDEN / "calib.json").read_bytes()

    for name, with_scores in (("mask.mjpm", False), ("mask_scores.mjpm", True)):
        mask = load_mask(GOLDEN / name)
        save_mask(tmp_path / name, mask, with_scores=with_scores)
        ok &= (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes()
    verdict(capsys, 10, ok, "point cloud, PGM, calib JSON and both MJPM variants "
                    "round-trip bit-exactly against the checked-in goldens")
