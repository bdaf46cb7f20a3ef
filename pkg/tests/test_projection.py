"""Lift-splat footprints and the mask-to-input index multipliers.

The index multipliers are checked against brute-force oracles that
recompute the keep decision per point (voxel lookup then block lookup)
and per patch (scan of its footprint), sharing no code with the
vectorized implementations.
"""

import numpy as np
import pytest

from bevprune.config import CameraConfig, GridConfig, LiftConfig
from bevprune.errors import DataError
from bevprune.geometry import project
from bevprune.projection import (FrustumFootprint, PatchGrid, depth_bin_values,
                                 index_multiply_camera, index_multiply_lidar,
                                 lift_patches)
from bevprune.rng import Stream
from bevprune.voxelgrid import MaskGrid, block_of, voxel_index


def setup_desk():
    g = GridConfig()
    cam = CameraConfig().model()
    lift = LiftConfig()
    pg = PatchGrid.for_camera(cam, lift.patch_size)
    spec, bm = g.spec(), g.block_map()
    fp = lift_patches(cam, pg, spec, lift.depth_bins, lift.d_min, lift.d_max)
    return spec, bm, cam, pg, fp


def test_patch_grid_basics():
    cam = CameraConfig().model()
    pg = PatchGrid.for_camera(cam, 8)
    assert (pg.cols, pg.rows, pg.n_patches) == (8, 8, 64)
    assert pg.center(0) == (4.0, 4.0)
    assert pg.center(9) == (12.0, 12.0)
    assert pg.pixel_rect(9) == (8, 8, 16, 16)


def test_patch_grid_indivisible():
    cam = CameraConfig().model()
    with pytest.raises(DataError):
        PatchGrid.for_camera(cam, 7)


def test_depth_bins():
    assert np.allclose(depth_bin_values(3, 1.0, 3.0), [1.0, 2.0, 3.0])
    assert np.allclose(depth_bin_values(1, 5.0, 9.0), [5.0])
    with pytest.raises(DataError):
        depth_bin_values(2, 3.0, 1.0)


def test_lift_single_bin_on_axis():
    spec, bm, cam, pg, _ = setup_desk()
    fp = lift_patches(cam, pg, spec, 1, 5.0, 12.0)
    # the patch containing the principal point has its center near the axis
    center_pid = (pg.rows // 2) * pg.cols + pg.cols // 2
    rows = fp.entries[center_pid]
    assert len(rows) == 1
    u, v = pg.center(center_pid)
    from bevprune.geometry import unproject
    expect = voxel_index(spec, unproject(cam, u, v, 5.0))
    assert tuple(rows[0][:3]) == expect


def test_lift_round_trip_oracle():
    """Project every footprint voxel center back; it must land in its patch."""
    spec, bm, cam, pg, fp = setup_desk()
    checked = 0
    for pid, rows in enumerate(fp.entries):
        u0, v0, u1, v1 = pg.pixel_rect(pid)
        for ix, iy, iz, _b in rows:
            center = spec.min_corner + (np.array([ix, iy, iz]) + 0.5) * spec.voxel_size
            res = project(cam, center)
            assert res is not None
            u, v, _ = res
            # voxels are coarser than patches; allow one patch of slack
            ps = pg.patch_size
            assert u0 - ps <= u < u1 + ps
            assert v0 - ps <= v < v1 + ps
            checked += 1
    assert checked > 100


def test_lift_empty_for_sky_patches():
    spec, bm, cam, pg, _ = setup_desk()
    # at far-only depths the upward-looking top rows leave the grid entirely
    fp = lift_patches(cam, pg, spec, 4, 10.0, 12.0)
    assert len(fp.entries[0]) == 0
    mask = MaskGrid.all_ones((32, 32, 4))
    assert 0 not in index_multiply_camera(mask, bm, fp)


def test_lidar_all_ones_and_zeros():
    spec, bm, cam, pg, fp = setup_desk()
    s = Stream(55)
    pts = np.column_stack([s.uniform_in(-15, 15, 2000),
                           s.uniform_in(-15, 15, 2000),
                           s.uniform_in(-3, 3, 2000),
                           s.uniform(2000)])
    ones = MaskGrid.all_ones((32, 32, 4))
    kept = index_multiply_lidar(ones, bm, spec, pts)
    in_range = [i for i in range(2000) if voxel_index(spec, pts[i, :3]) is not None]
    assert kept.tolist() == in_range
    zeros = MaskGrid.all_zeros((32, 32, 4))
    assert len(index_multiply_lidar(zeros, bm, spec, pts)) == 0


def test_lidar_brute_force_oracle():
    spec, bm, cam, pg, fp = setup_desk()
    s = Stream(56)
    pts = np.column_stack([s.uniform_in(-15, 15, 10000),
                           s.uniform_in(-15, 15, 10000),
                           s.uniform_in(-3, 3, 10000),
                           s.uniform(10000)])
    mask = MaskGrid.from_scores((32, 32, 4), s.uniform(32 * 32 * 4).reshape(32, 32, 4), 0.5)
    kept = set(index_multiply_lidar(mask, bm, spec, pts).tolist())
    flat = mask.flat_mask()
    for i in range(len(pts)):
        vox = voxel_index(spec, pts[i, :3])
        expect = vox is not None and bool(flat[block_of(bm, vox)])
        assert (i in kept) == expect


def test_camera_all_ones_and_zeros():
    spec, bm, cam, pg, fp = setup_desk()
    ones = MaskGrid.all_ones((32, 32, 4))
    kept = index_multiply_camera(ones, bm, fp)
    nonempty = [pid for pid in range(pg.n_patches) if len(fp.entries[pid]) > 0]
    assert kept == nonempty
    zeros = MaskGrid.all_zeros((32, 32, 4))
    assert index_multiply_camera(zeros, bm, fp) == []


def test_camera_brute_force_oracle():
    spec, bm, cam, pg, fp = setup_desk()
    s = Stream(57)
    for _ in range(10):
        mask = MaskGrid.from_scores((32, 32, 4), s.uniform(32 * 32 * 4).reshape(32, 32, 4), 0.5)
        kept = set(index_multiply_camera(mask, bm, fp))
        flat = mask.flat_mask()
        for pid in range(pg.n_patches):
            rows = fp.entries[pid]
            expect = any(flat[block_of(bm, tuple(r[:3]))] for r in rows)
            assert (pid in kept) == expect


def test_mask_monotonicity():
    """Adding mask ones never removes kept points or patches."""
    spec, bm, cam, pg, fp = setup_desk()
    s = Stream(58)
    pts = np.column_stack([s.uniform_in(-12, 12, 3000),
                           s.uniform_in(-12, 12, 3000),
                           s.uniform_in(-2, 2, 3000),
                           s.uniform(3000)])
    for _ in range(10):
        scores = s.uniform(32 * 32 * 4)
        small = MaskGrid.from_scores((32, 32, 4), scores.reshape(32, 32, 4), 0.7)
        big_scores = np.maximum(scores, s.uniform(32 * 32 * 4))
        big = MaskGrid.from_scores((32, 32, 4), big_scores.reshape(32, 32, 4), 0.7)
        assert np.all(big.mask | ~small.mask)  # superset construction held
        kept_small = set(index_multiply_lidar(small, bm, spec, pts).tolist())
        kept_big = set(index_multiply_lidar(big, bm, spec, pts).tolist())
        assert kept_small <= kept_big
        assert set(index_multiply_camera(small, bm, fp)) <= set(index_multiply_camera(big, bm, fp))
