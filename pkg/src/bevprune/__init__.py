"""Content-aware joint pruning of LiDAR points and camera patches on a BEV grid.

A small scorer predicts a binary importance mask over a coarse bird's-eye-view
grid; the mask is back-projected through the camera calibration to drop LiDAR
points and image patches before any feature extraction, and an exact operation
counter quantifies the compute saved against the resulting task quality.
"""

from .config import RunConfig
from .pipeline import Pipeline
from .voxelgrid import BlockMap, MaskGrid, VoxelGridSpec

__all__ = ["BlockMap", "MaskGrid", "Pipeline", "RunConfig", "VoxelGridSpec"]

__version__ = "0.1.0"
