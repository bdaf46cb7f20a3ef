"""Run configuration: grid, camera, lift, scene, training and bench settings.

One JSON format repo-wide; unknown keys are rejected.  CLI flags override
file values; the MJP_SEED environment variable overrides the config seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError
from .geometry import FRONT_CAM_ROTATION, CameraModel, Pose
from .voxelgrid import BlockMap, VoxelGridSpec


@dataclass
class GridConfig:
    min_corner: tuple[float, float, float] = (-12.8, -12.8, -2.0)
    max_corner: tuple[float, float, float] = (12.8, 12.8, 2.0)
    voxel_size: tuple[float, float, float] = (0.2, 0.2, 0.2)
    mask_dims: tuple[int, int, int] = (32, 32, 4)  # (W, H, Z)

    @staticmethod
    def full_scale() -> "GridConfig":
        """Full-scale grid: 1024x1024x80 voxels, 128x128x16 mask."""
        return GridConfig(min_corner=(-51.2, -51.2, -8.0),
                          max_corner=(51.2, 51.2, 8.0),
                          voxel_size=(0.1, 0.1, 0.2),
                          mask_dims=(128, 128, 16))

    def spec(self) -> VoxelGridSpec:
        return VoxelGridSpec(np.array(self.min_corner), np.array(self.max_corner),
                             np.array(self.voxel_size))

    def block_map(self) -> BlockMap:
        return BlockMap(self.spec().dims, tuple(self.mask_dims))


@dataclass
class CameraConfig:
    fx: float = 64.0
    fy: float = 64.0
    cx: float = 32.0
    cy: float = 32.0
    width: int = 64
    height: int = 64
    position: tuple[float, float, float] = (0.0, 0.0, 0.6)

    def model(self) -> CameraModel:
        pose = Pose(FRONT_CAM_ROTATION, np.array(self.position))
        return CameraModel(self.fx, self.fy, self.cx, self.cy,
                           self.width, self.height, pose)


@dataclass
class LiftConfig:
    patch_size: int = 8
    depth_bins: int = 16
    d_min: float = 1.0
    d_max: float = 12.0


@dataclass
class SceneConfig:
    n_boxes_min: int = 2
    n_boxes_max: int = 5
    box_length: tuple[float, float] = (2.2, 3.6)
    box_width: tuple[float, float] = (2.2, 3.6)
    box_height: tuple[float, float] = (0.4, 0.8)
    ground_z: float = -1.0
    wall_prob: float = 0.25
    n_azimuth: int = 360
    n_elevation: int = 48
    max_range: float = 18.0
    noise_sigma: float = 0.01
    seed: int = 42

    def __post_init__(self):
        if self.n_azimuth < 1 or self.n_elevation < 1:
            raise DataError("ray counts must be >= 1")
        if self.noise_sigma < 0:
            raise DataError("noise_sigma must be >= 0")
        if self.n_boxes_min < 0 or self.n_boxes_max < self.n_boxes_min:
            raise DataError("invalid box count range")


@dataclass
class TrainConfig:
    alpha: float = 10.0         # consistency weight
    beta: float = 8.0           # sparsity weight
    gamma: float = 0.5          # penalty weight
    lam: float = 1.0            # penalty scale inside the hinge
    target_ratio: float = 0.5   # target fraction of mask cells dropped
    theta: float = 0.5          # binarization threshold
    learning_rate: float = 0.3
    epochs_task: int = 2000     # stage 1, head on full maps
    epochs_cons: int = 300      # stage 2, scorer on consistency
    epochs_joint: int = 4000    # stage 3, everything jointly
    epochs_finetune: int = 300  # stage 4, head on hard-pruned maps
    seed: int = 42

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma, self.lam) < 0:
            raise DataError("loss weights must be >= 0")
        if not (0.0 < self.theta < 1.0):
            raise DataError("theta must lie in (0, 1)")
        if not (0.0 < self.target_ratio < 1.0):
            raise DataError("target_ratio must lie in (0, 1)")
        if min(self.epochs_task, self.epochs_cons,
               self.epochs_joint, self.epochs_finetune) < 0:
            raise DataError("epoch counts must be >= 0")


@dataclass
class BenchConfig:
    ratios: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    c_voxel: float = 4.0       # ops per retained voxel block aggregation
    c_patch: float = 1.0       # ops per kept patch per depth bin
    c_predictor: float = 64.0  # fixed predictor overhead per frame


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    lift: LiftConfig = field(default_factory=LiftConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _build_section(cls, values: dict, path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise DataError(f"unknown config keys in '{path}': {sorted(unknown)}")
    coerced = {}
    for key, val in values.items():
        if isinstance(val, list):
            val = tuple(val)
        coerced[key] = val
    return cls(**coerced)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid config JSON: {exc}", path=str(path)) from exc
    if not isinstance(doc, dict):
        raise DataError("config root must be a JSON object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise DataError(f"unknown config sections: {sorted(unknown)}")
    sections = {
        "grid": GridConfig, "camera": CameraConfig, "lift": LiftConfig,
        "scene": SceneConfig, "train": TrainConfig, "bench": BenchConfig,
    }
    kwargs = {}
    for name, cls in sections.items():
        if name in doc:
            if not isinstance(doc[name], dict):
                raise DataError(f"config section '{name}' must be an object")
            kwargs[name] = _build_section(cls, doc[name], name)
    return RunConfig(**kwargs)


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
