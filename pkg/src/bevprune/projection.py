"""Forward (lift) and backward (index multiplier) projections.

``lift_patches`` casts one ray per image patch through discrete depth bins
and records which grid voxels the ray visits; the result depends only on
calibration and grid, so it is computed once and reused across frames.

``index_multiply_*`` apply a BEV mask to raw sensor inputs: LiDAR points
are kept iff their voxel's block is unmasked; a camera patch is kept iff
at least one of its frustum voxels is unmasked (conservative rule).
Patches whose rays never enter the grid (sky) are always dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatchError
from .geometry import CameraModel, unproject_points
from .voxelgrid import BlockMap, MaskGrid, VoxelGridSpec, block_cells, flat_index, voxel_indices


@dataclass(frozen=True)
class PatchGrid:
    """Square patch tiling of the camera image; patch id = row * cols + col."""

    patch_size: int
    cols: int
    rows: int

    @classmethod
    def for_camera(cls, cam: CameraModel, patch_size: int) -> "PatchGrid":
        if cam.width % patch_size or cam.height % patch_size:
            raise DataError(f"image {cam.width}x{cam.height} is not a multiple of patch size {patch_size}")
        return cls(patch_size, cam.width // patch_size, cam.height // patch_size)

    @property
    def n_patches(self) -> int:
        return self.cols * self.rows

    def center(self, patch_id: int) -> tuple[float, float]:
        row, col = divmod(patch_id, self.cols)
        half = self.patch_size / 2.0
        return (col * self.patch_size + half, row * self.patch_size + half)

    def pixel_rect(self, patch_id: int) -> tuple[int, int, int, int]:
        """(u0, v0, u1, v1) half-open pixel bounds of the patch."""
        row, col = divmod(patch_id, self.cols)
        ps = self.patch_size
        return (col * ps, row * ps, (col + 1) * ps, (row + 1) * ps)


@dataclass(frozen=True)
class FrustumFootprint:
    """Per-patch lists of (ix, iy, iz, depth_bin) entries, sorted by bin."""

    n_patches: int
    depth_bins: np.ndarray          # (D,) meters
    entries: tuple[np.ndarray, ...]  # per patch, (n, 4) int array

    @property
    def n_bins(self) -> int:
        return len(self.depth_bins)

    def total_entries(self) -> int:
        return sum(len(e) for e in self.entries)


def depth_bin_values(n_bins: int, d_min: float, d_max: float) -> np.ndarray:
    """Linearly spaced z-depths; a single bin sits at d_min."""
    if n_bins < 1 or not (0.0 < d_min < d_max):
        raise DataError("need n_bins >= 1 and 0 < d_min < d_max")
    if n_bins == 1:
        return np.array([d_min])
    return np.linspace(d_min, d_max, n_bins)


def lift_patches(cam: CameraModel, pg: PatchGrid, spec: VoxelGridSpec,
                 n_bins: int, d_min: float, d_max: float) -> FrustumFootprint:
    """Frustum footprint of every patch: ray through the patch center,
    sampled at the discrete depths, recorded where it lands in the grid."""
    depths = depth_bin_values(n_bins, d_min, d_max)
    entries = []
    bins = np.arange(len(depths))
    for pid in range(pg.n_patches):
        u, v = pg.center(pid)
        pts = unproject_points(cam, np.full(len(depths), u), np.full(len(depths), v), depths)
        idx, in_range = voxel_indices(spec, pts)
        rows = np.column_stack([idx[in_range], bins[in_range]]).astype(np.int64)
        entries.append(rows)
    return FrustumFootprint(pg.n_patches, depths, tuple(entries))


def _check_mask_dims(mask: MaskGrid, bm: BlockMap) -> None:
    if mask.dims != tuple(bm.mask_dims):
        raise DimensionMismatchError(f"mask dims {mask.dims} != block map mask dims {bm.mask_dims}")


def index_multiply_lidar(mask: MaskGrid, bm: BlockMap, spec: VoxelGridSpec,
                         points) -> np.ndarray:
    """Indices (input order) of points whose voxel block is unmasked."""
    _check_mask_dims(mask, bm)
    if tuple(bm.voxel_dims) != spec.dims:
        raise DimensionMismatchError(f"block map voxel dims {bm.voxel_dims} != grid dims {spec.dims}")
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return np.zeros(0, dtype=np.int64)
    idx, in_range = voxel_indices(spec, pts[:, :3])
    cx, cy, cz = block_cells(bm, idx)
    # clamp out-of-range rows to a valid cell; they are discarded below anyway
    w, h, z = mask.dims
    cx = np.clip(cx, 0, w - 1)
    cy = np.clip(cy, 0, h - 1)
    cz = np.clip(cz, 0, z - 1)
    keep = in_range & mask.mask[cy, cx, cz]
    return np.nonzero(keep)[0].astype(np.int64)


def index_multiply_camera(mask: MaskGrid, bm: BlockMap, fp: FrustumFootprint) -> list[int]:
    """Patch ids kept under the conservative any-voxel-retained rule."""
    _check_mask_dims(mask, bm)
    bx, by, bz = bm.block
    kept = []
    for pid, rows in enumerate(fp.entries):
        if len(rows) == 0:
            continue  # ray never enters the grid (sky): always dropped
        cx = rows[:, 0] // bx
        cy = rows[:, 1] // by
        cz = rows[:, 2] // bz
        if np.any(mask.mask[cy, cx, cz]):
            kept.append(pid)
    return kept


def footprint_cell_flat(bm: BlockMap, fp: FrustumFootprint) -> tuple[np.ndarray, ...]:
    """Per patch, the flat mask-cell index of every footprint entry."""
    bx, by, bz = bm.block
    out = []
    for rows in fp.entries:
        if len(rows) == 0:
            out.append(np.zeros(0, dtype=np.int64))
            continue
        out.append(flat_index(bm.mask_dims, rows[:, 0] // bx, rows[:, 1] // by, rows[:, 2] // bz))
    return tuple(out)
