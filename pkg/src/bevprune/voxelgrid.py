"""BEV-anchored voxel grid, coarse mask grid, and the block map between them.

Flattening order for both grids: j = (iy * W + ix) * Z + iz, i.e. z fastest,
then x, then y.  Arrays are therefore stored with shape (H, W, Z) so that
C-order ravel matches the on-disk flattening.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionMismatchError, FormatError

_SNAP = 1e-9  # guards floor() against values an ulp below an integer

MASK_MAGIC = b"MJPM"
MASK_VERSION = 1


@dataclass(frozen=True)
class VoxelGridSpec:
    """Axis-aligned grid over [min_corner, max_corner) with fixed voxel size."""

    min_corner: np.ndarray
    max_corner: np.ndarray
    voxel_size: np.ndarray
    dims: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        lo = np.asarray(self.min_corner, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max_corner, dtype=np.float64).reshape(3)
        vs = np.asarray(self.voxel_size, dtype=np.float64).reshape(3)
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)
        object.__setattr__(self, "voxel_size", vs)
        if np.any(hi <= lo):
            raise DataError("max_corner must exceed min_corner on every axis")
        if np.any(vs <= 0):
            raise DataError("voxel_size must be positive")
        ratio = (hi - lo) / vs
        dims = np.round(ratio).astype(int)
        if np.any(np.abs(ratio - dims) > 1e-9) or np.any(dims < 1):
            raise DataError(f"grid extent is not an integer multiple of voxel size (ratio {ratio})")
        object.__setattr__(self, "dims", (int(dims[0]), int(dims[1]), int(dims[2])))


def grid_dims(spec: VoxelGridSpec) -> tuple[int, int, int]:
    return spec.dims


def voxel_index(spec: VoxelGridSpec, p) -> tuple[int, int, int] | None:
    """Voxel holding point p, or None when out of range (upper bound exclusive)."""
    r = (np.asarray(p, dtype=np.float64) - spec.min_corner) / spec.voxel_size
    idx = np.floor(r + _SNAP).astype(int)
    if np.any(idx < 0) or np.any(idx >= np.asarray(spec.dims)):
        return None
    return (int(idx[0]), int(idx[1]), int(idx[2]))


def voxel_indices(spec: VoxelGridSpec, pts: np.ndarray):
    """Vectorized voxel indices for (n, 3) points.

    Returns (idx (n, 3) int array, in_range (n,) bool); idx rows are
    meaningless where in_range is False.
    """
    r = (np.asarray(pts, dtype=np.float64) - spec.min_corner) / spec.voxel_size
    idx = np.floor(r + _SNAP).astype(np.int64)
    in_range = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    return idx, in_range


def flat_index(dims: tuple[int, int, int], ix, iy, iz):
    """Flattened index under the package-wide (y, x, z) order."""
    w, _, z = dims[0], dims[1], dims[2]
    return (iy * w + ix) * z + iz


@dataclass(frozen=True)
class BlockMap:
    """Maps fine voxel indices onto coarse mask cells by integer division."""

    voxel_dims: tuple[int, int, int]
    mask_dims: tuple[int, int, int]
    block: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        vd, md = self.voxel_dims, self.mask_dims
        if any(v % m != 0 for v, m in zip(vd, md)):
            raise DataError(f"voxel dims {vd} are not multiples of mask dims {md}")
        object.__setattr__(self, "block", tuple(v // m for v, m in zip(vd, md)))


def block_of(bm: BlockMap, voxel: tuple[int, int, int]) -> int:
    """Flat mask-cell index governing the given voxel."""
    ix, iy, iz = voxel
    nx, ny, nz = bm.voxel_dims
    if not (0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz):
        raise DataError(f"voxel {voxel} outside grid dims {bm.voxel_dims}")
    bx, by, bz = bm.block
    return flat_index(bm.mask_dims, ix // bx, iy // by, iz // bz)


def block_cells(bm: BlockMap, idx: np.ndarray):
    """Vectorized (n, 3) voxel indices -> (cx, cy, cz) mask-cell coordinates."""
    bx, by, bz = bm.block
    return idx[:, 0] // bx, idx[:, 1] // by, idx[:, 2] // bz


def voxelize(spec: VoxelGridSpec, points):
    """Bucket points by flattened voxel index.

    Returns (buckets, discards): buckets is a dict ordered by flat voxel
    index mapping to lists of point indices in input order; discards lists
    the out-of-range point indices.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return {}, []
    idx, in_range = voxel_indices(spec, pts[:, :3])
    flat = flat_index(spec.dims, idx[:, 0], idx[:, 1], idx[:, 2])
    buckets: dict[int, list[int]] = {}
    discards: list[int] = []
    for i in range(len(pts)):
        if in_range[i]:
            buckets.setdefault(int(flat[i]), []).append(i)
        else:
            discards.append(i)
    return dict(sorted(buckets.items())), discards


class MaskGrid:
    """Importance scores plus the binarized pruning mask over (W, H, Z) cells.

    Arrays use shape (H, W, Z) so ``.ravel()`` follows the flattening order.
    """

    def __init__(self, dims: tuple[int, int, int], scores: np.ndarray,
                 mask: np.ndarray, threshold: float):
        w, h, z = dims
        if not (0.0 < threshold < 1.0):
            raise DataError("threshold must lie in (0, 1)")
        scores = np.asarray(scores, dtype=np.float64).reshape(h, w, z)
        mask = np.asarray(mask, dtype=bool).reshape(h, w, z)
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise DataError("scores must lie in [0, 1]")
        self.dims = (int(w), int(h), int(z))
        self.scores = scores
        self.mask = mask
        self.threshold = float(threshold)

    @property
    def n_cells(self) -> int:
        w, h, z = self.dims
        return w * h * z

    @property
    def zero_fraction(self) -> float:
        return 1.0 - float(self.mask.sum()) / self.n_cells

    @classmethod
    def from_scores(cls, dims, scores, threshold: float) -> "MaskGrid":
        w, h, z = dims
        scores = np.asarray(scores, dtype=np.float64).reshape(h, w, z)
        return cls(dims, scores, scores >= threshold, threshold)

    @classmethod
    def from_topk(cls, dims, scores, drop_ratio: float, threshold: float = 0.5) -> "MaskGrid":
        """Hard mask keeping the top (1 - drop_ratio) cells by score.

        Ties are broken toward the lower flattened index.  The stored
        threshold is informational; the mask comes from the rank cut.
        """
        if not (0.0 <= drop_ratio <= 1.0):
            raise DataError("drop_ratio must lie in [0, 1]")
        w, h, z = dims
        scores = np.asarray(scores, dtype=np.float64).reshape(h, w, z)
        n = w * h * z
        n_keep = n - int(round(drop_ratio * n))
        order = np.argsort(-scores.ravel(), kind="stable")
        flat_mask = np.zeros(n, dtype=bool)
        flat_mask[order[:n_keep]] = True
        return cls(dims, scores, flat_mask.reshape(h, w, z), threshold)

    @classmethod
    def all_ones(cls, dims, threshold: float = 0.5) -> "MaskGrid":
        w, h, z = dims
        return cls(dims, np.ones((h, w, z)), np.ones((h, w, z), bool), threshold)

    @classmethod
    def all_zeros(cls, dims, threshold: float = 0.5) -> "MaskGrid":
        w, h, z = dims
        return cls(dims, np.zeros((h, w, z)), np.zeros((h, w, z), bool), threshold)

    def rebinarize(self) -> None:
        """Recompute the mask from scores and threshold (>= rule)."""
        self.mask = self.scores >= self.threshold

    def flat_mask(self) -> np.ndarray:
        return self.mask.ravel()

    def flat_scores(self) -> np.ndarray:
        return self.scores.ravel()


def save_mask(path, grid: MaskGrid, with_scores: bool = True) -> None:
    """Write the MJPM mask file (bit-packed, LSB-first, flattening order)."""
    w, h, z = grid.dims
    bits = grid.flat_mask().astype(np.uint8)
    packed = np.packbits(bits, bitorder="little")
    with open(path, "wb") as fh:
        fh.write(MASK_MAGIC)
        fh.write(struct.pack("<B", MASK_VERSION))
        fh.write(struct.pack("<III", w, h, z))
        fh.write(struct.pack("<f", grid.threshold))
        fh.write(packed.tobytes())
        if with_scores:
            fh.write(grid.flat_scores().astype("<f4").tobytes())


def load_mask(path) -> MaskGrid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MASK_MAGIC:
        raise FormatError("bad mask magic", path=str(path), offset=0)
    if len(blob) < 21:
        raise FormatError("truncated mask header", path=str(path), offset=len(blob))
    version = blob[4]
    if version != MASK_VERSION:
        raise FormatError(f"unsupported mask version {version}", path=str(path), offset=4)
    w, h, z = struct.unpack_from("<III", blob, 5)
    (threshold,) = struct.unpack_from("<f", blob, 17)
    n = w * h * z
    n_bytes = (n + 7) // 8
    off = 21
    if len(blob) < off + n_bytes:
        raise FormatError("truncated mask bits", path=str(path), offset=len(blob))
    bits = np.unpackbits(np.frombuffer(blob, np.uint8, n_bytes, off), bitorder="little")[:n]
    off += n_bytes
    rest = len(blob) - off
    if rest == 0:
        scores = bits.astype(np.float64)
        grid = MaskGrid((w, h, z), scores, bits.astype(bool), float(threshold))
        return grid
    if rest != 4 * n:
        raise FormatError("trailing bytes are not a full score block", path=str(path), offset=off)
    scores = np.frombuffer(blob, "<f4", n, off).astype(np.float64)
    return MaskGrid((w, h, z), scores, bits.astype(bool), float(threshold))
