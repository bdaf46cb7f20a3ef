"""Shared wiring of one configured pipeline: grid, camera, lift, extractors.

The frustum footprint and all cell geometry depend only on calibration, so
they are computed once here and reused across frames.  ``FramePack``
bundles everything training and evaluation need for a single frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .data import SceneFrame
from .features import (BevFeatureMap, FUSED_CHANNELS, concat_maps, extract_camera_bev,
                       extract_lidar_bev, patch_descriptors, smooth_channels, smooth_map)
from .geometry import CameraModel, project_points
from .projection import FrustumFootprint, PatchGrid, lift_patches
from .pruning import PruneOutcome, prune_frame
from .taskproxy import OccupancyTruth, occupancy_from_boxes
from .voxelgrid import BlockMap, MaskGrid, VoxelGridSpec

N_CELL_FEATURES = 8
_FOOTPRINT_COUNT_NORM = 8.0
_ACTIVITY_LOG_NORM = 5.0


@dataclass
class FramePack:
    """Per-frame tensors over the mask grid, ready for training/evaluation."""

    frame: SceneFrame
    f0_pre: np.ndarray       # (H, W, C) pre-smoothing fused map, full inputs
    s0: np.ndarray           # (H, W, C) smoothed fused map, full inputs
    activity: np.ndarray     # (H, W, Z) points + splat entries / D per cell
    act_norm: np.ndarray     # (H, W, Z) activity / column activity (0 where idle)
    cell_features: np.ndarray  # (H, W, Z, 7)
    truth: OccupancyTruth


class Pipeline:
    """Configured grid + camera + footprint, with per-frame helpers."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.spec: VoxelGridSpec = cfg.grid.spec()
        self.bm: BlockMap = cfg.grid.block_map()
        self.mask_dims = tuple(cfg.grid.mask_dims)
        self.cam: CameraModel = cfg.camera.model()
        self.pg = PatchGrid.for_camera(self.cam, cfg.lift.patch_size)
        self.fp: FrustumFootprint = lift_patches(
            self.cam, self.pg, self.spec,
            cfg.lift.depth_bins, cfg.lift.d_min, cfg.lift.d_max)
        self._static = self._cell_geometry()

    # -- calibration-static cell quantities --------------------------------

    def _cell_geometry(self):
        w, h, z = self.mask_dims
        ex = self.spec.max_corner - self.spec.min_corner
        cell = ex / np.array([w, h, z])
        xs = self.spec.min_corner[0] + (np.arange(w) + 0.5) * cell[0]
        ys = self.spec.min_corner[1] + (np.arange(h) + 0.5) * cell[1]
        zs = self.spec.min_corner[2] + (np.arange(z) + 0.5) * cell[2]
        gy, gx, gz = np.meshgrid(ys, xs, zs, indexing="ij")  # (H, W, Z)
        centers = np.stack([gx, gy, gz], axis=-1)
        flat = centers.reshape(-1, 3)
        u, v, _, valid = project_points(self.cam, flat)
        ps = self.pg.patch_size
        patch_id = np.full(len(flat), -1, dtype=np.int64)
        uu = np.clip(u[valid].astype(np.int64) // ps, 0, self.pg.cols - 1)
        vv = np.clip(v[valid].astype(np.int64) // ps, 0, self.pg.rows - 1)
        patch_id[valid] = vv * self.pg.cols + uu
        patch_id = patch_id.reshape(h, w, z)
        # distinct patches whose frustum touches each cell
        bx, by, bz = self.bm.block
        fp_count = np.zeros((h, w, z))
        for rows in self.fp.entries:
            if len(rows) == 0:
                continue
            cells = np.unique(np.column_stack(
                [rows[:, 1] // by, rows[:, 0] // bx, rows[:, 2] // bz]), axis=0)
            fp_count[cells[:, 0], cells[:, 1], cells[:, 2]] += 1.0
        radius = float(np.hypot(max(abs(self.spec.min_corner[0]), self.spec.max_corner[0]),
                                max(abs(self.spec.min_corner[1]), self.spec.max_corner[1])))
        planar = np.hypot(gx, gy) / radius
        height = gz / max(abs(self.spec.min_corner[2]), self.spec.max_corner[2])
        return {
            "centers": centers,
            "patch_id": patch_id,
            "fp_count_norm": np.clip(fp_count / _FOOTPRINT_COUNT_NORM, 0.0, 1.0),
            "planar": np.clip(planar, 0.0, 1.0),
            "height": np.clip(height, -1.0, 1.0),
        }

    # -- per-frame products ------------------------------------------------

    def original_maps(self, frame: SceneFrame, counter=None):
        """(lidar, camera, f0_pre, s0) for the unpruned frame."""
        lidar = extract_lidar_bev(self.spec, self.bm, frame.points, counter=counter)
        camera = extract_camera_bev(self.cam, self.pg, self.fp, frame.image,
                                    range(self.pg.n_patches), bm=self.bm, counter=counter)
        pre = concat_maps(lidar, camera)
        return lidar, camera, pre, smooth_map(pre)

    def masked_maps(self, frame: SceneFrame, mask: MaskGrid, counter=None):
        """Hard-pruned fused maps plus the prune outcome."""
        outcome = prune_frame(frame, mask, self.bm, self.spec, self.fp)
        lidar = extract_lidar_bev(self.spec, self.bm, frame.points,
                                  kept_indices=outcome.kept_point_indices,
                                  mask=mask, counter=counter)
        camera = extract_camera_bev(self.cam, self.pg, self.fp, frame.image,
                                    outcome.kept_patch_indices,
                                    bm=self.bm, mask=mask, counter=counter)
        pre = concat_maps(lidar, camera)
        return pre, smooth_map(pre), outcome

    def cell_activity(self, frame: SceneFrame) -> np.ndarray:
        """Points per cell plus footprint entries per cell weighted 1/D."""
        from .voxelgrid import voxel_indices
        w, h, z = self.mask_dims
        act = np.zeros((h, w, z))
        pts = np.asarray(frame.points, dtype=np.float64).reshape(-1, 4)
        if len(pts):
            idx, in_range = voxel_indices(self.spec, pts[:, :3])
            idx = idx[in_range]
            bx, by, bz = self.bm.block
            np.add.at(act, (idx[:, 1] // by, idx[:, 0] // bx, idx[:, 2] // bz), 1.0)
        weight = 1.0 / self.fp.n_bins
        bx, by, bz = self.bm.block
        for rows in self.fp.entries:
            if len(rows) == 0:
                continue
            np.add.at(act, (rows[:, 1] // by, rows[:, 0] // bx, rows[:, 2] // bz), weight)
        return act

    def cell_features(self, frame: SceneFrame,
                      activity: np.ndarray | None = None) -> np.ndarray:
        """(H, W, Z, 8) per-cell predictor inputs.

        [bias, planar range, height, in-front-image flag, patch mean
        luminance, patch gradient energy, footprint patch count, log
        activity], with image features zeroed for cells outside the front
        view.  Activity (point count plus splat coverage) is a single cheap
        pass over the raw inputs, available before any feature extraction.
        """
        st = self._static
        h, w, z = st["patch_id"].shape
        desc = patch_descriptors(frame.image, self.pg)
        pid = st["patch_id"]
        flag = (pid >= 0).astype(np.float64)
        safe_pid = np.where(pid >= 0, pid, 0)
        lum = np.where(pid >= 0, desc[safe_pid, 0], 0.0)
        grad = np.where(pid >= 0, np.clip(desc[safe_pid, 1], 0.0, 1.0), 0.0)
        if activity is None:
            activity = self.cell_activity(frame)
        # step at activation plus a graded term, so a moderate linear weight
        # cleanly separates populated cells from empty ones
        graded = np.clip(np.log1p(activity) / _ACTIVITY_LOG_NORM, 0.0, 1.0)
        act_feat = np.where(activity > 0.0, 0.5 + 0.5 * graded, 0.0)
        feats = np.stack([
            np.ones((h, w, z)),
            st["planar"],
            st["height"],
            flag,
            lum,
            grad,
            st["fp_count_norm"],
            act_feat,
        ], axis=-1)
        return feats

    def frame_pack(self, frame: SceneFrame) -> FramePack:
        _, _, pre, s0 = self.original_maps(frame)
        act = self.cell_activity(frame)
        col = act.sum(axis=2)
        act_norm = np.where(col[:, :, None] > 0, act / np.where(col, col, 1.0)[:, :, None], 0.0)
        truth = occupancy_from_boxes(frame.boxes, self.spec, self.mask_dims)
        return FramePack(frame=frame, f0_pre=pre.values, s0=s0.values,
                         activity=act, act_norm=act_norm,
                         cell_features=self.cell_features(frame, act), truth=truth)

    def soft_maps(self, pack: FramePack, scores: np.ndarray):
        """(gate, f_soft_pre, s_soft) for per-cell soft weights in [0, 1]."""
        gate = np.sum(pack.act_norm * scores, axis=2)
        f_soft = gate[:, :, None] * pack.f0_pre
        return gate, f_soft, smooth_channels(f_soft)

    def fused_map(self, values: np.ndarray) -> BevFeatureMap:
        return BevFeatureMap(values, FUSED_CHANNELS)
