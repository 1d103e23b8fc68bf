"""Synthetic scenes: analytic reference models, camera rings, ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .render import DENSITY_SHIFT, Camera, CameraSet, RadianceModel, render_image

__all__ = ["SceneSpec", "make_synthetic_scene", "split_cameras", "init_model"]

SHAPES = ("sphere", "cube", "two_spheres")

INSIDE_DENSITY = 25.0
OUTSIDE_DENSITY = -40.0
CAMERA_RADIUS = 1.7
CAMERA_FOV_DEG = 40.0
GOLDEN_ANGLE_DEG = 137.50776405003785


@dataclass(frozen=True)
class SceneSpec:
    shape: str = "sphere"
    grid_n: int = 16
    n_views: int = 10
    resolution: int = 48
    seed: int = 0

    def __post_init__(self) -> None:
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; pick one of {SHAPES}")
        if self.grid_n < 8:
            raise ValueError(f"grid_n must be >= 8, got {self.grid_n}")
        if self.n_views < 2:
            raise ValueError(f"n_views must be >= 2, got {self.n_views}")
        if self.resolution < 8:
            raise ValueError(f"resolution must be >= 8, got {self.resolution}")


def _site_centers(n: int) -> np.ndarray:
    """(n, n, n, 3) positions of voxel centers in the unit cube."""
    c = (np.arange(n) + 0.5) / n
    gx, gy, gz = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def _inside(shape: str, pts: np.ndarray) -> np.ndarray:
    if shape == "sphere":
        return np.linalg.norm(pts - 0.5, axis=-1) <= 0.30
    if shape == "cube":
        return np.max(np.abs(pts - 0.5), axis=-1) <= 0.27
    if shape == "two_spheres":
        a = np.linalg.norm(pts - np.array([0.32, 0.5, 0.5]), axis=-1) <= 0.18
        b = np.linalg.norm(pts - np.array([0.68, 0.5, 0.5]), axis=-1) <= 0.18
        return a | b
    raise ValueError(f"unknown shape {shape!r}")


def _reference_model(spec: SceneSpec) -> RadianceModel:
    pts = _site_centers(spec.grid_n)
    density = np.where(_inside(spec.shape, pts), INSIDE_DENSITY, OUTSIDE_DENSITY)
    # position-dependent colors, biased bright so the affine bias has work to do
    color = np.stack(
        [
            3.2 * (pts[..., 0] - 0.5) + 0.9,
            3.2 * (pts[..., 1] - 0.5) + 0.55,
            3.2 * (pts[..., 2] - 0.5) + 0.25,
        ],
        axis=-1,
    )
    return RadianceModel.build(density, color)


def _camera_ring(spec: SceneSpec) -> list[Camera]:
    rng = np.random.default_rng(spec.seed)
    azimuth0 = float(rng.uniform(0.0, 360.0))
    cameras = []
    for i in range(spec.n_views):
        az = np.deg2rad(azimuth0 + i * GOLDEN_ANGLE_DEG)
        elev = np.deg2rad(-20.0 + 55.0 * (i % 4) / 3.0)
        center = np.array([0.5, 0.5, 0.5])
        pos = center + CAMERA_RADIUS * np.array(
            [np.cos(elev) * np.cos(az), np.cos(elev) * np.sin(az), np.sin(elev)]
        )
        cameras.append(
            Camera(
                position=tuple(pos),
                look_at=(0.5, 0.5, 0.5),
                up=(0.0, 0.0, 1.0),
                fov_deg=CAMERA_FOV_DEG,
                width=spec.resolution,
                height=spec.resolution,
            )
        )
    return cameras


def make_synthetic_scene(spec: SceneSpec) -> tuple[RadianceModel, CameraSet]:
    """Reference model plus cameras with rendered ground-truth images."""
    reference = _reference_model(spec)
    cameras = _camera_ring(spec)
    images = [render_image(reference, cam) for cam in cameras]
    return reference, CameraSet(cameras, images)


def split_cameras(views: CameraSet, val_fraction: float = 0.1) -> tuple[CameraSet, CameraSet]:
    """Deterministic train/validation split; at least one view on each side."""
    n = len(views)
    n_val = min(max(1, round(n * val_fraction)), n - 1)
    n_train = n - n_val
    train = CameraSet(views.cameras[:n_train], views.images[:n_train])
    val = CameraSet(views.cameras[n_train:], views.images[n_train:])
    return train, val


def init_model(spec: SceneSpec) -> RadianceModel:
    """Fresh trainable model: thin uniform fog, mid-gray colors, identity affine."""
    n = spec.grid_n
    density = np.full((n, n, n), -1.5 - DENSITY_SHIFT)
    color = np.zeros((n, n, n, 3))
    return RadianceModel.build(density, color)
