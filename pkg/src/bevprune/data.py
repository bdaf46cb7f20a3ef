"""Synthetic scene generation and bit-exact file I/O.

A scene is a textured ground plane plus axis-aligned boxes resting on it
(optionally one long wall-like box).  LiDAR points come from ray casting
with clipped Gaussian range noise; the camera image is ray-cast onto the
same geometry with hash-based surface texture.  Everything is a pure
function of the seed via SplitMix64 streams (see rng.py).

Dataset layout: scene_%05d/{points.bin, image.pgm, calib.json, boxes.json}.
Point records are little-endian f32 quadruples (x, y, z, intensity), no
header.  Images are binary PGM (P5, maxval 255).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import CameraConfig, SceneConfig
from .errors import DataError, FormatError
from .geometry import CameraModel, load_calib, save_calib
from .rng import Stream, hash_coords, mix64

NOISE_CLIP_SIGMAS = 6.0
_SKY_LUM = 0.78


@dataclass(frozen=True)
class Box:
    """Axis-aligned-when-yaw-0 box: center, (l, w, h) size, yaw about +z."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def aabb(self):
        c = np.asarray(self.center)
        half = np.asarray(self.size) / 2.0
        return c - half, c + half


@dataclass
class SceneFrame:
    points: np.ndarray       # (n, 4) float32: x, y, z, intensity
    image: np.ndarray        # (height, width) uint8 grayscale
    cam: CameraModel
    boxes: list[Box]
    seed: int

    def __post_init__(self):
        if self.image.shape != (self.cam.height, self.cam.width):
            raise DataError("image dims do not match camera model")


def _ray_aabb(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Entry parameter t per ray (inf when the ray misses the box)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    near = np.nanmax(np.minimum(t1, t2), axis=1)
    far = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (far >= near) & (far > 0.0)
    t = np.where(near > 0.0, near, far)  # rays starting inside exit through far
    return np.where(hit, t, np.inf)


def _cast(origin: np.ndarray, dirs: np.ndarray, boxes: list[Box], ground_z: float):
    """Nearest surface per ray: (t, surface_id); ground is id 0, boxes 1+i."""
    n = len(dirs)
    t_best = np.full(n, np.inf)
    surf = np.full(n, -1, dtype=np.int64)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore"):
        t_ground = np.where(dz < 0.0, (ground_z - origin[2]) / dz, np.inf)
    better = t_ground < t_best
    t_best[better] = t_ground[better]
    surf[better] = 0
    for i, box in enumerate(boxes):
        lo, hi = box.aabb()
        t_box = _ray_aabb(origin, dirs, lo, hi)
        better = t_box < t_best
        t_best[better] = t_box[better]
        surf[better] = 1 + i
    return t_best, surf


def _sample_boxes(cfg: SceneConfig, rng: Stream, seed: int) -> list[Box]:
    n_boxes = cfg.n_boxes_min if cfg.n_boxes_max == cfg.n_boxes_min else \
        cfg.n_boxes_min + rng.randint(0, cfg.n_boxes_max - cfg.n_boxes_min + 1)
    boxes: list[Box] = []
    # all boxes inside the front-camera frustum so the mask predictor can see them
    for _ in range(n_boxes):
        for attempt in range(1000):
            length = rng.uniform_in(*cfg.box_length)
            width = rng.uniform_in(*cfg.box_width)
            height = rng.uniform_in(*cfg.box_height)
            x = rng.uniform_in(2.5, 10.5)
            half_span = 0.35 * x
            y = rng.uniform_in(-half_span, half_span)
            cand = Box((x, y, cfg.ground_z + height / 2.0), (length, width, height))
            lo, hi = cand.aabb()
            clear = True
            for other in boxes:
                olo, ohi = other.aabb()
                if np.all(lo[:2] < ohi[:2] + 0.3) and np.all(hi[:2] > olo[:2] - 0.3):
                    clear = False
                    break
            if clear:
                boxes.append(cand)
                break
        # crowded scenes keep whatever fit; determinism is unaffected
    if rng.uniform() < cfg.wall_prob:
        boxes.append(Box((10.5, 0.0, cfg.ground_z + 1.1), (0.4, 7.0, 2.2)))
    return boxes


def _lidar_points(cfg: SceneConfig, boxes: list[Box], rng: Stream) -> np.ndarray:
    az = np.arange(cfg.n_azimuth) * (2.0 * math.pi / cfg.n_azimuth)
    el = np.linspace(math.radians(-28.0), math.radians(4.0), cfg.n_elevation)
    azg, elg = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack([np.cos(elg) * np.cos(azg),
                     np.cos(elg) * np.sin(azg),
                     np.sin(elg)], axis=-1).reshape(-1, 3)
    origin = np.zeros(3)
    t, surf = _cast(origin, dirs, boxes, cfg.ground_z)
    hit = (t > 0.1) & (t <= cfg.max_range)
    dirs, t, surf = dirs[hit], t[hit], surf[hit]
    noise = rng.normal(len(t), clip=NOISE_CLIP_SIGMAS) * cfg.noise_sigma
    pts = origin + dirs * (t + noise)[:, None]
    base = np.where(surf == 0, 0.30, 0.80)
    jitter = 0.1 * (rng.uniform(len(t)) - 0.5)
    intensity = np.clip(base + jitter, 0.0, 1.0)
    return np.column_stack([pts, intensity]).astype(np.float32)


def _render_image(cam_cfg: CameraConfig, boxes: list[Box], ground_z: float,
                  seed: int, albedos: np.ndarray) -> np.ndarray:
    cam = cam_cfg.model()
    h, w = cam.height, cam.width
    v, u = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dirs_cam = np.stack([(u.ravel() + 0.5 - cam.cx) / cam.fx,
                         (v.ravel() + 0.5 - cam.cy) / cam.fy,
                         np.ones(h * w)], axis=-1)
    dirs = dirs_cam @ cam.pose.rotation.T
    origin = cam.pose.translation
    t, surf = _cast(origin, dirs, boxes, ground_z)
    pts = origin + dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
    tex_seed = mix64(seed ^ 0x7465787475726531)
    lum = np.full(h * w, _SKY_LUM)
    ground = surf == 0
    if np.any(ground):
        tex = hash_coords(tex_seed, np.floor(2.0 * pts[ground, 0]), np.floor(2.0 * pts[ground, 1]))
        lum[ground] = 0.30 + 0.35 * tex
    for i in range(len(boxes)):
        sel = surf == 1 + i
        if not np.any(sel):
            continue
        depth = t[sel]
        tex = hash_coords(mix64(tex_seed + i + 1),
                          np.floor(4.0 * (pts[sel, 0] + pts[sel, 1])),
                          np.floor(4.0 * pts[sel, 2]))
        lum[sel] = np.clip(albedos[i] * (1.0 - 0.02 * depth) * (0.75 + 0.35 * tex), 0.0, 1.0)
    return np.round(255.0 * lum).astype(np.uint8).reshape(h, w)


def generate_scene(cfg: SceneConfig, seed: int,
                   cam_cfg: CameraConfig | None = None) -> SceneFrame:
    """Fully seed-determined scene: boxes, LiDAR points, camera image."""
    cam_cfg = cam_cfg or CameraConfig()
    root = Stream(seed)
    boxes = _sample_boxes(cfg, root.derive("boxes"), seed)
    points = _lidar_points(cfg, boxes, root.derive("lidar"))
    albedo_rng = root.derive("albedo")
    albedos = 0.85 + 0.15 * albedo_rng.uniform(max(len(boxes), 1))
    image = _render_image(cam_cfg, boxes, cfg.ground_z, seed, albedos)
    return SceneFrame(points=points, image=image, cam=cam_cfg.model(),
                      boxes=boxes, seed=seed)


# ---------------------------------------------------------------------------
# file formats

def write_pointcloud(path, points: np.ndarray) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 4))
    with open(path, "wb") as fh:
        fh.write(pts.tobytes())


def read_pointcloud(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) % 16 != 0:
        raise FormatError("point file size is not a multiple of 16",
                          path=str(path), offset=len(blob) - len(blob) % 16)
    return np.frombuffer(blob, dtype="<f4").reshape(-1, 4).copy()


def write_image_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2:
        raise DataError("image must be 2-D grayscale")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_image_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(b"P5"):
        raise FormatError("not a binary PGM (P5) file", path=str(path), offset=0)
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", path=str(path), offset=pos)
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError("non-numeric PGM header", path=str(path), offset=2) from exc
    if maxval != 255:
        raise FormatError(f"unsupported PGM maxval {maxval}", path=str(path), offset=2)
    if len(blob) - pos != w * h:
        raise FormatError(f"PGM payload is {len(blob) - pos} bytes, expected {w * h}",
                          path=str(path), offset=pos)
    return np.frombuffer(blob, np.uint8, w * h, pos).reshape(h, w).copy()


def write_boxes(path, boxes: list[Box]) -> None:
    doc = [{"center": list(b.center), "size": list(b.size), "yaw": b.yaw} for b in boxes]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_boxes(path) -> list[Box]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid boxes JSON: {exc}", path=str(path)) from exc
    boxes = []
    for entry in doc:
        try:
            boxes.append(Box(tuple(entry["center"]), tuple(entry["size"]),
                             float(entry.get("yaw", 0.0))))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed box entry: {entry}", path=str(path)) from exc
    return boxes


def write_scene(scene_dir, frame: SceneFrame) -> None:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    write_pointcloud(scene_dir / "points.bin", frame.points)
    write_image_pgm(scene_dir / "image.pgm", frame.image)
    save_calib(scene_dir / "calib.json", frame.cam)
    write_boxes(scene_dir / "boxes.json", frame.boxes)


def read_scene(scene_dir) -> SceneFrame:
    scene_dir = Path(scene_dir)
    for name in ("points.bin", "image.pgm", "calib.json", "boxes.json"):
        if not (scene_dir / name).exists():
            raise FormatError(f"missing scene file {name}", path=str(scene_dir))
    cam = load_calib(scene_dir / "calib.json")
    return SceneFrame(points=read_pointcloud(scene_dir / "points.bin"),
                      image=read_image_pgm(scene_dir / "image.pgm"),
                      cam=cam,
                      boxes=read_boxes(scene_dir / "boxes.json"),
                      seed=0)


def scene_dirs(data_dir) -> list[Path]:
    dirs = sorted(Path(data_dir).glob("scene_*"))
    if not dirs:
        raise FormatError("no scene_* directories found", path=str(data_dir))
    return dirs


def generate_dataset(out_dir, n_scenes: int, cfg: SceneConfig,
                     cam_cfg: CameraConfig | None = None) -> list[Path]:
    """Write n_scenes deterministic scenes under out_dir."""
    out_dir = Path(out_dir)
    root = Stream(cfg.seed)
    paths = []
    for i in range(n_scenes):
        seed = root.derive(f"scene_{i:05d}").seed
        frame = generate_scene(cfg, seed, cam_cfg)
        scene_dir = out_dir / f"scene_{i:05d}"
        write_scene(scene_dir, frame)
        paths.append(scene_dir)
    return paths
