"""Synthetic scene generation and bit-exact file formats."""

import dataclasses

import numpy as np
import pytest

from bevprune.config import CameraConfig, SceneConfig
from bevprune.data import (Box, generate_dataset, generate_scene,
                           read_boxes, read_image_pgm, read_pointcloud,
                           read_scene, scene_dirs, write_boxes,
                           write_image_pgm, write_pointcloud, write_scene)
from bevprune.errors import FormatError
from bevprune.rng import Stream


def small_scene_cfg(**over):
    # lighter ray counts keep the data tests fast
    base = SceneConfig(n_azimuth=120, n_elevation=16)
    return dataclasses.replace(base, **over)


def test_scene_deterministic():
    cfg = small_scene_cfg()
    a = generate_scene(cfg, 7, CameraConfig())
    b = generate_scene(cfg, 7, CameraConfig())
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.image, b.image)
    assert a.boxes == b.boxes


def test_scene_seed_changes_content():
    cfg = small_scene_cfg()
    a = generate_scene(cfg, 7, CameraConfig())
    b = generate_scene(cfg, 8, CameraConfig())
    assert not np.array_equal(a.points, b.points)


def test_empty_scene_points_on_ground():
    cfg = small_scene_cfg(n_boxes_min=0, n_boxes_max=0, wall_prob=0.0,
                          noise_sigma=0.0)
    frame = generate_scene(cfg, 3, CameraConfig())
    assert len(frame.boxes) == 0
    assert np.abs(frame.points[:, 2] - cfg.ground_z).max() < 1e-5


def test_noise_free_points_on_surfaces():
    """0-noise box-surface points lie on the box AABB within f32 precision."""
    cfg = small_scene_cfg(n_boxes_min=1, n_boxes_max=1, wall_prob=0.0,
                          noise_sigma=0.0)
    frame = generate_scene(cfg, 5, CameraConfig())
    (box,) = frame.boxes
    lo, hi = box.aabb()
    pts = frame.points[:, :3].astype(np.float64)
    on_ground = np.abs(pts[:, 2] - cfg.ground_z) < 1e-5
    box_pts = pts[~on_ground]
    assert len(box_pts) > 0
    # distance to the AABB surface: one coordinate sits on a face,
    # the others are inside the slab
    d_faces = np.minimum(np.abs(box_pts[:, None, :] - lo[None, None, :]),
                         np.abs(box_pts[:, None, :] - hi[None, None, :])).min(axis=(1, 2))
    inside = np.all((box_pts >= lo - 1e-5) & (box_pts <= hi + 1e-5), axis=1)
    assert np.all(inside)
    assert d_faces.max() < 1e-5


def test_noise_is_clipped():
    cfg = small_scene_cfg(n_boxes_min=0, n_boxes_max=0, wall_prob=0.0,
                          noise_sigma=0.05)
    frame = generate_scene(cfg, 11, CameraConfig())
    # ranges are perturbed along the ray; z error bounded by 6 sigma
    assert np.abs(frame.points[:, 2] - cfg.ground_z).max() <= 6.0 * 0.05 + 1e-5


def test_points_dtype_and_intensity_range():
    frame = generate_scene(small_scene_cfg(), 2, CameraConfig())
    assert frame.points.dtype == np.float32
    assert frame.points.shape[1] == 4
    assert frame.points[:, 3].min() >= 0.0 and frame.points[:, 3].max() <= 1.0


def test_image_dimensions_and_sky():
    cam_cfg = CameraConfig()
    frame = generate_scene(small_scene_cfg(), 2, cam_cfg)
    assert frame.image.shape == (cam_cfg.height, cam_cfg.width)
    assert frame.image.dtype == np.uint8
    # the top row looks above the horizon: uniform sky
    assert len(np.unique(frame.image[0])) == 1


def test_pointcloud_round_trip(tmp_path):
    s = Stream(13)
    pts = s.normal(4000).reshape(1000, 4).astype(np.float32)
    path = tmp_path / "p.bin"
    write_pointcloud(path, pts)
    back = read_pointcloud(path)
    assert np.array_equal(back, pts)


def test_pointcloud_empty_round_trip(tmp_path):
    path = tmp_path / "p.bin"
    write_pointcloud(path, np.zeros((0, 4), np.float32))
    assert read_pointcloud(path).shape == (0, 4)


def test_pointcloud_truncated(tmp_path):
    path = tmp_path / "p.bin"
    path.write_bytes(bytes(15))
    with pytest.raises(FormatError):
        read_pointcloud(path)


def test_pgm_round_trip(tmp_path):
    img = (Stream(14).uniform(64 * 48).reshape(48, 64) * 255).astype(np.uint8)
    path = tmp_path / "i.pgm"
    write_image_pgm(path, img)
    assert np.array_equal(read_image_pgm(path), img)


def test_pgm_rejects_bad_magic(tmp_path):
    path = tmp_path / "i.pgm"
    path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(FormatError):
        read_image_pgm(path)


def test_pgm_rejects_short_payload(tmp_path):
    path = tmp_path / "i.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(FormatError):
        read_image_pgm(path)


def test_boxes_round_trip(tmp_path):
    boxes = [Box((1.0, 2.0, 3.0), (0.5, 0.6, 0.7), 0.25),
             Box((-1.0, 0.0, 0.5), (2.0, 2.0, 1.0))]
    path = tmp_path / "b.json"
    write_boxes(path, boxes)
    assert read_boxes(path) == boxes


def test_boxes_malformed(tmp_path):
    path = tmp_path / "b.json"
    path.write_text('[{"size": [1,1,1]}]')
    with pytest.raises(FormatError):
        read_boxes(path)


def test_scene_round_trip(tmp_path):
    frame = generate_scene(small_scene_cfg(), 9, CameraConfig())
    write_scene(tmp_path / "scene_00000", frame)
    back = read_scene(tmp_path / "scene_00000")
    assert np.array_equal(back.points, frame.points)
    assert np.array_equal(back.image, frame.image)
    assert back.boxes == frame.boxes
    assert back.cam.fx == frame.cam.fx


def test_scene_missing_file(tmp_path):
    frame = generate_scene(small_scene_cfg(), 9, CameraConfig())
    write_scene(tmp_path / "scene_00000", frame)
    (tmp_path / "scene_00000" / "image.pgm").unlink()
    with pytest.raises(FormatError):
        read_scene(tmp_path / "scene_00000")


def test_generate_dataset_deterministic(tmp_path):
    cfg = small_scene_cfg()
    a = generate_dataset(tmp_path / "a", 3, cfg, CameraConfig())
    b = generate_dataset(tmp_path / "b", 3, cfg, CameraConfig())
    assert len(a) == len(b) == 3
    for da, db in zip(a, b):
        for name in ("points.bin", "image.pgm", "calib.json", "boxes.json"):
            assert (da / name).read_bytes() == (db / name).read_bytes()
    assert scene_dirs(tmp_path / "a") == a


def test_scene_dirs_empty(tmp_path):
    with pytest.raises(FormatError):
        scene_dirs(tmp_path)
