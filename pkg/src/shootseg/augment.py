"""Seeded geometric/color transforms producing training views of a cloud."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AugmentConfig:
    rotation_z_max: float = np.pi          # radians, uniform in [-max, max]
    rotation_xy_max: float = 0.1           # small tilt about x and y
    scale_range: tuple[float, float] = (0.9, 1.1)
    jitter_sigma: float = 0.2              # mm, per-point Gaussian
    flip_probability: float = 0.5          # per horizontal axis
    color_jitter_sigma: float = 0.05

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.jitter_sigma < 0 or self.color_jitter_sigma < 0:
            raise ValueError("sigmas must be >= 0")
        if not 0 <= self.flip_probability <= 1:
            raise ValueError(f"flip_probability must be in [0,1], got {self.flip_probability}")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, (1.0, 1.0), 0.0, 0.0, 0.0)

    @classmethod
    def for_voxel_size(cls, voxel_size: float, **overrides) -> "AugmentConfig":
        """Defaults with jitter scaled to the working voxel grid."""
        overrides.setdefault("jitter_sigma", 0.2 * voxel_size)
        return cls(**overrides)


@dataclass
class TransformParams:
    """One concrete draw of the random transform (exposed for exact tests)."""

    flip_x: bool = False
    flip_y: bool = False
    scale: float = 1.0
    angle_z: float = 0.0
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    jitter: np.ndarray | None = None        # (M, 3) mm offsets
    color_jitter: np.ndarray | None = None  # (M, 3)


def sample_transform(cfg: AugmentConfig, rng: np.random.Generator, n_points: int) -> TransformParams:
    lo, hi = cfg.scale_range
    return TransformParams(
        flip_x=bool(rng.random() < cfg.flip_probability),
        flip_y=bool(rng.random() < cfg.flip_probability),
        scale=float(rng.uniform(lo, hi)),
        angle_z=float(rng.uniform(-cfg.rotation_z_max, cfg.rotation_z_max)),
        tilt_x=float(rng.uniform(-cfg.rotation_xy_max, cfg.rotation_xy_max)),
        tilt_y=float(rng.uniform(-cfg.rotation_xy_max, cfg.rotation_xy_max)),
        jitter=rng.normal(0.0, cfg.jitter_sigma, (n_points, 3)) if cfg.jitter_sigma > 0 else None,
        color_jitter=(
            rng.normal(0.0, cfg.color_jitter_sigma, (n_points, 3))
            if cfg.color_jitter_sigma > 0
            else None
        ),
    )


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def apply_transform(coords: np.ndarray, colors: np.ndarray, p: TransformParams):
    """Apply flips, scale, rotation (z then tilt), jitter, color jitter.

    Geometric ops act about the cloud centroid so the plant stays put; labels
    are the caller's business (point order never changes).
    """
    center = coords.mean(axis=0)
    out = coords - center
    if p.flip_x:
        out[:, 0] = -out[:, 0]
    if p.flip_y:
        out[:, 1] = -out[:, 1]
    out *= p.scale
    rot = _rot_x(p.tilt_x) @ _rot_y(p.tilt_y) @ _rot_z(p.angle_z)
    out = out @ rot.T
    out += center
    if p.jitter is not None:
        out = out + p.jitter
    cols = colors
    if p.color_jitter is not None:
        cols = np.clip(colors + p.color_jitter, 0.0, 1.0)
    return out, cols


def random_transform(cloud, cfg: AugmentConfig, seed) -> "PointCloud":
    """Seeded random view of a cloud; labels carried unchanged."""
    from .cloud import PointCloud

    rng = np.random.default_rng(seed)
    params = sample_transform(cfg, rng, len(cloud))
    coords, colors = apply_transform(cloud.coords, cloud.colors, params)
    return PointCloud(
        coords, colors, cloud.semantic, cloud.instance, source_id=cloud.source_id
    )
