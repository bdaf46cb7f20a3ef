"""Rigid transforms and pinhole projection.

Coordinate conventions (used everywhere in the package):
  Ego frame:    x forward, y left, z up (right-handed).
  Camera frame: z forward (optical axis), x right, y down.
  Image frame:  u right, v down, origin at the top-left pixel corner.

All geometry is double precision; file formats may narrow to f32.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

_ORTHO_TOL = 1e-9

# Camera-to-ego rotation for a front camera looking along ego +x:
# camera x (right) -> ego -y, camera y (down) -> ego -z, camera z -> ego +x.
FRONT_CAM_ROTATION = np.array(
    [[0.0, 0.0, 1.0],
     [-1.0, 0.0, 0.0],
     [0.0, -1.0, 0.0]]
)


@dataclass(frozen=True)
class Pose:
    """Rigid sensor-to-ego transform: p_ego = R @ p_sensor + t."""

    rotation: np.ndarray   # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,) meters

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHO_TOL):
            raise DataError("pose rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise DataError("pose rotation must have det +1")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


def yaw_rotation(angle: float) -> np.ndarray:
    """Rotation about +z by ``angle`` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform_point(pose: Pose, p) -> np.ndarray:
    """Map a sensor-frame point into the ego frame."""
    return pose.rotation @ np.asarray(p, dtype=np.float64) + pose.translation


def transform_points(pose: Pose, pts: np.ndarray) -> np.ndarray:
    """Vectorized transform of an (n, 3) array."""
    return pts @ pose.rotation.T + pose.translation


def invert_pose(pose: Pose) -> Pose:
    """Ego-to-sensor inverse: R', t' with R' = R^T, t' = -R^T t."""
    rt = pose.rotation.T
    return Pose(rt, -rt @ pose.translation)


def compose(outer: Pose, inner: Pose) -> Pose:
    """Pose applying ``inner`` first, then ``outer``."""
    return Pose(outer.rotation @ inner.rotation,
                outer.rotation @ inner.translation + outer.translation)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: intrinsics in pixels plus camera-to-ego pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: Pose

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise DataError("principal point must lie inside the image")


def project(cam: CameraModel, p_ego) -> tuple[float, float, float] | None:
    """Project an ego-frame point; returns (u, v, depth) or None if out of view."""
    p_cam = transform_point(invert_pose(cam.pose), p_ego)
    z = p_cam[2]
    if z <= 0.0:
        return None
    u = cam.fx * p_cam[0] / z + cam.cx
    v = cam.fy * p_cam[1] / z + cam.cy
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        return None
    return (float(u), float(v), float(z))


def project_points(cam: CameraModel, pts: np.ndarray):
    """Vectorized projection of (n, 3) ego points.

    Returns (u, v, depth, valid); u/v/depth are undefined where valid is False.
    """
    p_cam = transform_points(invert_pose(cam.pose), np.asarray(pts, dtype=np.float64))
    z = p_cam[:, 2]
    front = z > 0.0
    zs = np.where(front, z, 1.0)
    u = cam.fx * p_cam[:, 0] / zs + cam.cx
    v = cam.fy * p_cam[:, 1] / zs + cam.cy
    valid = front & (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return u, v, z, valid


def unproject(cam: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    """Ego-frame point whose projection is (u, v) at the given z-depth."""
    if depth <= 0.0:
        raise DataError(f"unproject requires depth > 0, got {depth}")
    p_cam = np.array([(u - cam.cx) / cam.fx * depth,
                      (v - cam.cy) / cam.fy * depth,
                      depth])
    return transform_point(cam.pose, p_cam)


def unproject_points(cam: CameraModel, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Vectorized unprojection; all inputs broadcast to a common length."""
    u, v, depth = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(depth, float))
    if np.any(depth <= 0.0):
        raise DataError("unproject requires depth > 0")
    p_cam = np.stack([(u - cam.cx) / cam.fx * depth,
                      (v - cam.cy) / cam.fy * depth,
                      depth], axis=-1)
    return transform_points(cam.pose, p_cam)


def save_calib(path, cam: CameraModel) -> None:
    """Write camera calibration JSON (row-major 4x4 camera-to-ego)."""
    mat = np.eye(4)
    mat[:3, :3] = cam.pose.rotation
    mat[:3, 3] = cam.pose.translation
    doc = {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "T_cam_to_ego": [float(x) for x in mat.reshape(16)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_calib(path) -> CameraModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid calibration JSON: {exc}", path=str(path)) from exc
    required = {"fx", "fy", "cx", "cy", "width", "height", "T_cam_to_ego"}
    missing = required - doc.keys()
    if missing:
        raise FormatError(f"calibration missing keys {sorted(missing)}", path=str(path))
    mat = np.asarray(doc["T_cam_to_ego"], dtype=np.float64)
    if mat.size != 16:
        raise FormatError("T_cam_to_ego must hold 16 numbers", path=str(path))
    mat = mat.reshape(4, 4)
    if not np.array_equal(mat[3], [0.0, 0.0, 0.0, 1.0]):
        raise FormatError("T_cam_to_ego bottom row must be (0,0,0,1)", path=str(path))
    pose = Pose(mat[:3, :3], mat[:3, 3])
    return CameraModel(fx=float(doc["fx"]), fy=float(doc["fy"]),
                       cx=float(doc["cx"]), cy=float(doc["cy"]),
                       width=int(doc["width"]), height=int(doc["height"]),
                       pose=pose)
