"""End-to-end joint pruning of one frame plus on-disk artifacts.

``prune_frame`` composes the LiDAR and camera index multipliers into one
outcome with exact pruning ratios.  Out-of-range points are pruned by
geometry and reported separately, so the mask ratios speak only about
mask cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SceneFrame, read_pointcloud, write_pointcloud
from .errors import FormatError
from .projection import FrustumFootprint, index_multiply_camera, index_multiply_lidar
from .voxelgrid import BlockMap, MaskGrid, VoxelGridSpec, load_mask, save_mask, voxel_indices


@dataclass
class PruneOutcome:
    kept_point_indices: np.ndarray   # indices into the frame's point array
    kept_patch_indices: list[int]
    n_points: int
    n_in_range: int
    n_out_of_range: int
    n_patches: int
    prune_ratio_voxels: float   # fraction of mask cells set to 0
    prune_ratio_points: float   # over in-range points only
    prune_ratio_patches: float


def prune_frame(frame: SceneFrame, mask: MaskGrid, bm: BlockMap,
                spec: VoxelGridSpec, fp: FrustumFootprint) -> PruneOutcome:
    pts = np.asarray(frame.points, dtype=np.float64).reshape(-1, 4)
    kept_points = index_multiply_lidar(mask, bm, spec, pts)
    kept_patches = index_multiply_camera(mask, bm, fp)
    _, in_range = voxel_indices(spec, pts[:, :3])
    n_in = int(in_range.sum())
    ratio_points = 0.0 if n_in == 0 else 1.0 - len(kept_points) / n_in
    return PruneOutcome(
        kept_point_indices=kept_points,
        kept_patch_indices=kept_patches,
        n_points=len(pts),
        n_in_range=n_in,
        n_out_of_range=len(pts) - n_in,
        n_patches=fp.n_patches,
        prune_ratio_voxels=mask.zero_fraction,
        prune_ratio_points=ratio_points,
        prune_ratio_patches=1.0 - len(kept_patches) / fp.n_patches,
    )


def write_pruned_frame(outcome: PruneOutcome, frame: SceneFrame, mask: MaskGrid,
                       out_dir) -> dict:
    """Emit pruned points, kept-index file, patch bitmap, mask and manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kept = np.asarray(outcome.kept_point_indices, dtype=np.int64)
    write_pointcloud(out_dir / "points_pruned.bin", np.asarray(frame.points).reshape(-1, 4)[kept])
    (out_dir / "kept_point_indices.bin").write_bytes(kept.astype("<u4").tobytes())
    bits = np.zeros(outcome.n_patches, dtype=np.uint8)
    bits[list(outcome.kept_patch_indices)] = 1
    (out_dir / "patch_keep.bits").write_bytes(np.packbits(bits, bitorder="little").tobytes())
    save_mask(out_dir / "mask.mjpm", mask)
    manifest = {
        "kept_points": int(len(kept)),
        "kept_point_indices_file": "kept_point_indices.bin",
        "kept_patches": [int(p) for p in outcome.kept_patch_indices],
        "mask_file": "mask.mjpm",
        "n_patches": int(outcome.n_patches),
        "prune_ratio_voxels": outcome.prune_ratio_voxels,
        "prune_ratio_points": outcome.prune_ratio_points,
        "prune_ratio_patches": outcome.prune_ratio_patches,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_pruned_frame(out_dir):
    """Read back (kept_point_indices, kept_patches, pruned_points, mask)."""
    out_dir = Path(out_dir)
    try:
        with open(out_dir / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise FormatError("missing manifest.json", path=str(out_dir)) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid manifest: {exc}", path=str(out_dir)) from exc
    blob = (out_dir / manifest["kept_point_indices_file"]).read_bytes()
    if len(blob) % 4 != 0:
        raise FormatError("kept-index file size not a multiple of 4",
                          path=str(out_dir), offset=len(blob) - len(blob) % 4)
    kept = np.frombuffer(blob, "<u4").astype(np.int64)
    if len(kept) != manifest["kept_points"]:
        raise FormatError("kept-index count disagrees with manifest", path=str(out_dir))
    points = read_pointcloud(out_dir / "points_pruned.bin")
    mask = load_mask(out_dir / manifest["mask_file"])
    n_patches = manifest["n_patches"]
    raw = np.frombuffer((out_dir / "patch_keep.bits").read_bytes(), np.uint8)
    patch_bits = np.unpackbits(raw, bitorder="little")[:n_patches]
    kept_patches = [int(i) for i in np.nonzero(patch_bits)[0]]
    if kept_patches != manifest["kept_patches"]:
        raise FormatError("patch bitmap disagrees with manifest", path=str(out_dir))
    return kept, kept_patches, points, mask
