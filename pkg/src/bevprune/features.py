"""Toy sparse backbones and the BEV fusion step.

LiDAR: per BEV column (mask x-y cell), fixed statistics over the kept
points, skipping masked blocks entirely.  Camera: per kept patch, a mean
luminance / Sobel gradient-energy descriptor splatted with weight 1/D into
every frustum voxel's column.  Fusion is channel concatenation followed by
one 3x3 zero-padded mean-smoothing pass.

All consistency invariants (masked map equals the original on fully
retained columns, zero on fully pruned columns) hold on the pre-smoothing
concatenated map; smoothing is the only cross-column coupling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatchError
from .geometry import CameraModel
from .projection import FrustumFootprint, PatchGrid
from .voxelgrid import BlockMap, MaskGrid, VoxelGridSpec, voxel_indices

LIDAR_CHANNELS = ("log_point_count", "mean_z", "max_z", "z_variance", "mean_intensity")
CAMERA_CHANNELS = ("cam_mean_luminance", "cam_gradient_energy", "cam_hit_count")
FUSED_CHANNELS = LIDAR_CHANNELS + CAMERA_CHANNELS

_SOBEL_NORM = 32.0  # max of gx^2 + gy^2 for a [0, 1] image


@dataclass
class BevFeatureMap:
    """Dense (H, W, channels) feature map over the mask x-y grid."""

    values: np.ndarray
    channel_names: tuple[str, ...]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != len(self.channel_names):
            raise DimensionMismatchError("feature map shape does not match channel names")

    @property
    def dims(self) -> tuple[int, int]:
        """(W, H)."""
        return (self.values.shape[1], self.values.shape[0])

    @property
    def n_channels(self) -> int:
        return self.values.shape[2]


def extract_lidar_bev(spec: VoxelGridSpec, bm: BlockMap, points,
                      kept_indices=None, mask: MaskGrid | None = None,
                      counter=None) -> BevFeatureMap:
    """LiDAR column statistics over the kept points.

    ``kept_indices`` restricts which points contribute (None = all).  When a
    mask is given, points in masked blocks are skipped and the cost counter
    tallies only the retained blocks.
    """
    w, h, z = bm.mask_dims
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 4)
    if kept_indices is not None:
        pts = pts[np.asarray(kept_indices, dtype=np.int64)]
    if counter is not None:
        n_blocks = int(mask.mask.sum()) if mask is not None else w * h * z
        counter.add_lidar_blocks(n_blocks)
    count = np.zeros((h, w))
    sum_z = np.zeros((h, w))
    sum_z2 = np.zeros((h, w))
    sum_i = np.zeros((h, w))
    max_z = np.full((h, w), -np.inf)
    if len(pts):
        idx, in_range = voxel_indices(spec, pts[:, :3])
        pts, idx = pts[in_range], idx[in_range]
        bx, by, bz = bm.block
        cx, cy, cz = idx[:, 0] // bx, idx[:, 1] // by, idx[:, 2] // bz
        if mask is not None:
            keep = mask.mask[cy, cx, cz]
            pts, cx, cy = pts[keep], cx[keep], cy[keep]
        np.add.at(count, (cy, cx), 1.0)
        np.add.at(sum_z, (cy, cx), pts[:, 2])
        np.add.at(sum_z2, (cy, cx), pts[:, 2] ** 2)
        np.add.at(sum_i, (cy, cx), pts[:, 3])
        np.maximum.at(max_z, (cy, cx), pts[:, 2])
    occupied = count > 0
    safe = np.where(occupied, count, 1.0)
    mean_z = np.where(occupied, sum_z / safe, 0.0)
    var_z = np.where(occupied, np.maximum(sum_z2 / safe - mean_z ** 2, 0.0), 0.0)
    values = np.stack([
        np.log1p(count),
        mean_z,
        np.where(occupied, max_z, 0.0),
        var_z,
        np.where(occupied, sum_i / safe, 0.0),
    ], axis=-1)
    return BevFeatureMap(values, LIDAR_CHANNELS)


def patch_descriptors(image: np.ndarray, pg: PatchGrid,
                      patch_ids=None) -> np.ndarray:
    """(n, 2) mean luminance and Sobel gradient energy per patch, both in [0, 1]."""
    img = np.asarray(image, dtype=np.float64) / 255.0
    ids = list(range(pg.n_patches)) if patch_ids is None else [int(p) for p in patch_ids]
    out = np.zeros((len(ids), 2))
    for k, pid in enumerate(ids):
        u0, v0, u1, v1 = pg.pixel_rect(pid)
        patch = img[v0:v1, u0:u1]
        gx = (patch[:-2, 2:] + 2 * patch[1:-1, 2:] + patch[2:, 2:]
              - patch[:-2, :-2] - 2 * patch[1:-1, :-2] - patch[2:, :-2])
        gy = (patch[2:, :-2] + 2 * patch[2:, 1:-1] + patch[2:, 2:]
              - patch[:-2, :-2] - 2 * patch[:-2, 1:-1] - patch[:-2, 2:])
        out[k, 0] = patch.mean()
        out[k, 1] = float(np.mean(gx ** 2 + gy ** 2)) / _SOBEL_NORM
    return out


def extract_camera_bev(cam: CameraModel, pg: PatchGrid, fp: FrustumFootprint,
                       image: np.ndarray, kept_patches,
                       bm: BlockMap | None = None, mask: MaskGrid | None = None,
                       counter=None) -> BevFeatureMap:
    """Camera splat channels over the kept patches.

    When a mask (plus block map) is given, footprint entries falling in
    masked blocks are skipped, so fully pruned columns stay exactly zero.
    """
    if image.shape != (cam.height, cam.width):
        raise DimensionMismatchError(
            f"image shape {image.shape} != camera dims {(cam.height, cam.width)}")
    if mask is not None and bm is None:
        raise DataError("masked camera extraction needs the block map")
    kept = sorted(int(p) for p in kept_patches)
    if counter is not None:
        counter.add_patch_bins(len(kept) * fp.n_bins)
    # mask dims are needed for the output shape even without gating
    if bm is None:
        raise DataError("extract_camera_bev requires the block map for output dims")
    w, h, _ = bm.mask_dims
    weight = 1.0 / fp.n_bins
    sum_w = np.zeros((h, w))
    sum_lum = np.zeros((h, w))
    sum_grad = np.zeros((h, w))
    if kept:
        desc = patch_descriptors(image, pg, kept)
        bx, by, bz = bm.block
        for k, pid in enumerate(kept):
            rows = fp.entries[pid]
            if len(rows) == 0:
                continue
            cx = rows[:, 0] // bx
            cy = rows[:, 1] // by
            if mask is not None:
                cz = rows[:, 2] // bz
                retained = mask.mask[cy, cx, cz]
                cx, cy = cx[retained], cy[retained]
            np.add.at(sum_w, (cy, cx), weight)
            np.add.at(sum_lum, (cy, cx), weight * desc[k, 0])
            np.add.at(sum_grad, (cy, cx), weight * desc[k, 1])
    hit = sum_w > 0
    safe = np.where(hit, sum_w, 1.0)
    values = np.stack([
        np.where(hit, sum_lum / safe, 0.0),
        np.where(hit, sum_grad / safe, 0.0),
        sum_w,
    ], axis=-1)
    return BevFeatureMap(values, CAMERA_CHANNELS)


def concat_maps(lidar: BevFeatureMap, camera: BevFeatureMap) -> BevFeatureMap:
    """Channel concatenation (the pre-smoothing fused map)."""
    if lidar.values.shape[:2] != camera.values.shape[:2]:
        raise DimensionMismatchError(
            f"lidar dims {lidar.dims} != camera dims {camera.dims}")
    return BevFeatureMap(np.concatenate([lidar.values, camera.values], axis=-1),
                         lidar.channel_names + camera.channel_names)


def smooth_channels(values: np.ndarray) -> np.ndarray:
    """3x3 mean filter per channel with zero padding (linear, self-adjoint)."""
    padded = np.pad(values, ((1, 1), (1, 1), (0, 0)))
    out = np.zeros_like(values)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + values.shape[0], dx:dx + values.shape[1]]
    return out / 9.0


def smooth_map(fmap: BevFeatureMap) -> BevFeatureMap:
    return BevFeatureMap(smooth_channels(fmap.values), fmap.channel_names)


def fuse_bev(lidar: BevFeatureMap, camera: BevFeatureMap) -> BevFeatureMap:
    """Concatenate then smooth; linear in both inputs."""
    return smooth_map(concat_maps(lidar, camera))


def save_bev_map(path, fmap: BevFeatureMap) -> None:
    """Header (W, H, channels) as little-endian u32, then row-major f32 values."""
    h, w, c = fmap.values.shape
    with open(path, "wb") as fh:
        fh.write(np.array([w, h, c], dtype="<u4").tobytes())
        fh.write(fmap.values.astype("<f4").tobytes())


def load_bev_map(path, channel_names: tuple[str, ...] = FUSED_CHANNELS) -> BevFeatureMap:
    from .errors import FormatError
    blob = open(path, "rb").read()
    if len(blob) < 12:
        raise FormatError("truncated BEV map header", path=str(path), offset=len(blob))
    w, h, c = np.frombuffer(blob, "<u4", 3)
    need = 12 + 4 * w * h * c
    if len(blob) != need:
        raise FormatError(f"BEV map payload is {len(blob) - 12} bytes, expected {need - 12}",
                          path=str(path), offset=12)
    values = np.frombuffer(blob, "<f4", w * h * c, 12).astype(np.float64).reshape(h, w, c)
    names = channel_names if len(channel_names) == c else tuple(f"ch{i}" for i in range(c))
    return BevFeatureMap(values, names)
