"""Procedural test scenes: a torus-knot Gaussian cloud with posed cameras.

Replaces real captured datasets at desk scale. The ground-truth cloud renders
the "captured" views; a small ring of training cameras and a larger set of
held-out cameras sit on a sphere looking at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .image import Image, load_image, load_mask_pgm, save_image, save_mask_pgm
from .splat import Camera, GaussianCloud, load_cloud, render, save_cloud

OBJECT_ALPHA_THRESHOLD = 0.3
KNOT_PRIMITIVES = 300
CAMERA_RADIUS = 3.1


def logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-6, 1.0 - 1e-6)
    return np.log(p / (1.0 - p))


def make_knot_cloud(seed: int = 0, n: int = KNOT_PRIMITIVES) -> GaussianCloud:
    """Ground-truth cloud: primitives along a (2, 3) torus knot with varied colors."""
    rng = np.random.default_rng([int(seed), 0x5CE8E])
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    big_r, tube_r = 1.0, 0.38
    radial = big_r + tube_r * np.cos(3.0 * theta)
    centers = np.stack([
        radial * np.cos(2.0 * theta),
        radial * np.sin(2.0 * theta),
        tube_r * np.sin(3.0 * theta),
    ], axis=1)
    centers += rng.normal(0.0, 0.015, centers.shape)
    log_scales = np.log(0.065) + rng.normal(0.0, 0.18, (n, 3))
    quats = rng.normal(0.0, 1.0, (n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = np.full(n, 2.0)
    hue = (theta / (2.0 * np.pi) + rng.normal(0.0, 0.02, n)) % 1.0
    rgb = np.stack([
        0.5 + 0.42 * np.cos(2.0 * np.pi * hue),
        0.5 + 0.42 * np.cos(2.0 * np.pi * (hue - 1.0 / 3.0)),
        0.5 + 0.42 * np.cos(2.0 * np.pi * (hue - 2.0 / 3.0)),
    ], axis=1)
    return GaussianCloud(centers, log_scales, quats, opacity, logit(rgb))


def make_init_cloud(seed: int, n: int) -> GaussianCloud:
    """Random initialization for fitting: a loose ball of translucent blobs."""
    rng = np.random.default_rng([int(seed), 0x1217])
    centers = rng.uniform(-1.4, 1.4, (n, 3))
    log_scales = np.full((n, 3), np.log(0.14)) + rng.normal(0.0, 0.1, (n, 3))
    quats = rng.normal(0.0, 1.0, (n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacity = np.full(n, -1.0)
    colors = rng.normal(0.0, 0.3, (n, 3))
    return GaussianCloud(centers, log_scales, quats, opacity, colors)


def _sphere_camera(azimuth_deg, elevation_deg, resolution) -> Camera:
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    pos = CAMERA_RADIUS * np.array([
        np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    focal = 0.8 * resolution
    return Camera.look_at(pos, (0.0, 0.0, 0.0), focal, resolution, resolution)


def make_train_cameras(seed: int, n_views: int, resolution: int) -> list[Camera]:
    rng = np.random.default_rng([int(seed), 0xCA2])
    cams = []
    for k in range(n_views):
        az = 360.0 * k / n_views + rng.uniform(-12.0, 12.0)
        el = rng.uniform(-18.0, 32.0)
        cams.append(_sphere_camera(az, el, resolution))
    return cams


def make_heldout_cameras(seed: int, count: int, resolution: int) -> list[Camera]:
    rng = np.random.default_rng([int(seed), 0xE7A1])
    golden = 137.50776405003785
    cams = []
    for k in range(count):
        az = (golden * k + rng.uniform(0.0, 360.0 / max(count, 1))) % 360.0
        el = -22.0 + 54.0 * ((k + 0.5) / count)
        cams.append(_sphere_camera(az, el, resolution))
    return cams


@dataclass
class SceneView:
    camera: Camera
    image: Image              # rendered ground truth, alpha attached
    object_mask: np.ndarray   # binary plane from thresholded coverage


@dataclass
class Scene:
    gt_cloud: GaussianCloud
    train_views: list[SceneView]
    heldout_views: list[SceneView]


def make_scene(seed: int, n_views: int, heldout_count: int, resolution: int,
               support_sigma: float = 3.0) -> Scene:
    gt_cloud = make_knot_cloud(seed)

    def view_for(cam: Camera) -> SceneView:
        img = render(gt_cloud, cam, support_sigma)
        obj = (img.alpha >= OBJECT_ALPHA_THRESHOLD).astype(np.uint8)
        return SceneView(cam, img, obj)

    train = [view_for(c) for c in make_train_cameras(seed, n_views, resolution)]
    heldout = [view_for(c) for c in make_heldout_cameras(seed, heldout_count, resolution)]
    return Scene(gt_cloud, train, heldout)


def save_cameras(cams: list[Camera], path) -> None:
    lines = []
    for c in cams:
        vals = [*c.position, *c.rotation.ravel(), c.focal]
        lines.append(" ".join(repr(float(v)) for v in vals) + f" {c.width} {c.height}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_cameras(path) -> list[Camera]:
    cams = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 15:
            raise DataError(f"{path}:{ln}: expected 15 camera fields, got {len(parts)}")
        vals = [float(v) for v in parts[:13]]
        cams.append(Camera(np.array(vals[0:3]), np.array(vals[3:12]).reshape(3, 3),
                           vals[12], int(parts[13]), int(parts[14])))
    return cams


def save_scene(scene: Scene, dirpath) -> None:
    """Persist views as 8-bit Netpbm plus camera text files and the GT cloud.

    Downstream stages reload from disk, so the 8-bit quantization of the
    ground-truth views is applied once here and shared by every consumer.
    """
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    save_cloud(scene.gt_cloud, d / "gt_cloud.wgsc")
    save_cameras([v.camera for v in scene.train_views], d / "train_cameras.txt")
    save_cameras([v.camera for v in scene.heldout_views], d / "heldout_cameras.txt")
    for tag, views in (("train", scene.train_views), ("heldout", scene.heldout_views)):
        for i, v in enumerate(views):
            save_image(v.image, d / f"{tag}_{i:03d}.ppm")
            save_image(Image(v.image.alpha[:, :, None]), d / f"{tag}_{i:03d}_alpha.pgm")
            save_mask_pgm(v.object_mask, d / f"{tag}_{i:03d}_object.pgm")


def load_scene(dirpath) -> Scene:
    d = Path(dirpath)
    if not (d / "gt_cloud.wgsc").exists():
        raise DataError(f"no scene found at {d} (run synth-scene first)")
    gt_cloud = load_cloud(d / "gt_cloud.wgsc")

    def load_views(tag: str, cams: list[Camera]) -> list[SceneView]:
        views = []
        for i, cam in enumerate(cams):
            img = load_image(d / f"{tag}_{i:03d}.ppm")
            alpha = load_image(d / f"{tag}_{i:03d}_alpha.pgm").data[:, :, 0]
            obj = load_mask_pgm(d / f"{tag}_{i:03d}_object.pgm")
            views.append(SceneView(cam, Image(img.data, alpha=alpha), obj))
        return views

    train = load_views("train", load_cameras(d / "train_cameras.txt"))
    heldout = load_views("heldout", load_cameras(d / "heldout_cameras.txt"))
    return Scene(gt_cloud, train, heldout)
