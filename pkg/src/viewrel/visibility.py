"""Per-viewpoint visibility: pinhole frustum test plus depth-buffer occlusion.

A point-splat depth buffer stands in for ray casting: every scene point
(background included) projects into a coarse grid of per-cell minimum depths,
and an instance counts as visible when enough of its points land inside the
frustum and enough of those survive the depth comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .geometry import CameraPose, world_to_camera
from .scene import SceneBundle


@dataclass(frozen=True, slots=True)
class Intrinsics:
    """Pinhole camera model with its depth clip range."""

    fx: float = 577.87
    fy: float = 577.87
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480
    near: float = 0.1
    far: float = 10.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"image size must be at least 1x1, got {self.width}x{self.height}")
        if not (0 < self.near < self.far):
            raise ValidationError(f"need 0 < near < far, got near={self.near} far={self.far}")

    def as_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Intrinsics":
        return cls(**{k: d[k] for k in ("fx", "fy", "cx", "cy", "width", "height", "near", "far")})


@dataclass(frozen=True, slots=True)
class VisibilityConfig:
    """Thresholds for the frustum and occlusion tests."""

    theta_frustum: float = 0.2
    theta_unoccluded: float = 0.1
    delta_occ: float = 0.1
    buffer_w: int = 160
    buffer_h: int = 120

    def __post_init__(self):
        for name in ("theta_frustum", "theta_unoccluded"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if not self.delta_occ > 0:
            raise ValidationError(f"delta_occ must be positive, got {self.delta_occ}")
        if self.buffer_w < 1 or self.buffer_h < 1:
            raise ValidationError(f"buffer size must be at least 1x1, got {self.buffer_w}x{self.buffer_h}")

    def as_dict(self) -> dict:
        return {
            "theta_frustum": self.theta_frustum,
            "theta_unoccluded": self.theta_unoccluded,
            "delta_occ": self.delta_occ,
            "buffer_w": self.buffer_w,
            "buffer_h": self.buffer_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VisibilityConfig":
        return cls(**{k: d[k] for k in (
            "theta_frustum", "theta_unoccluded", "delta_occ", "buffer_w", "buffer_h")})


@dataclass(frozen=True, slots=True)
class DepthBuffer:
    """Grid of per-cell minimum camera depths; +inf where nothing projected."""

    grid: np.ndarray  # (buffer_h, buffer_w) float64

    def depth_at(self, cell_u: np.ndarray, cell_v: np.ndarray) -> np.ndarray:
        return self.grid[cell_v, cell_u]


def project_point(intr: Intrinsics, p_cam) -> tuple[float, float, float] | None:
    """Project one camera-frame point; None when outside the frustum."""
    x, y, z = (float(c) for c in np.asarray(p_cam, dtype=float))
    if not (intr.near < z < intr.far):
        return None
    u = intr.fx * x / z + intr.cx
    v = intr.fy * y / z + intr.cy
    if not (0.0 <= u < intr.width and 0.0 <= v < intr.height):
        return None
    return u, v, z


def _project_batch(intr: Intrinsics, cam_pts: np.ndarray):
    """Vectorized projection: (u, v, z, inside) with u/v meaningful only where inside."""
    z = cam_pts[:, 2]
    in_depth = (z > intr.near) & (z < intr.far)
    safe_z = np.where(in_depth, z, 1.0)
    u = intr.fx * cam_pts[:, 0] / safe_z + intr.cx
    v = intr.fy * cam_pts[:, 1] / safe_z + intr.cy
    inside = in_depth & (u >= 0.0) & (u < intr.width) & (v >= 0.0) & (v < intr.height)
    return u, v, z, inside


def _buffer_cells(intr: Intrinsics, cfg: VisibilityConfig, u: np.ndarray, v: np.ndarray):
    cu = np.minimum((u * (cfg.buffer_w / intr.width)).astype(np.int64), cfg.buffer_w - 1)
    cv = np.minimum((v * (cfg.buffer_h / intr.height)).astype(np.int64), cfg.buffer_h - 1)
    return cu, cv


def build_depth_buffer(
    scene: SceneBundle,
    pose: CameraPose,
    intr: Intrinsics,
    cfg: VisibilityConfig,
) -> DepthBuffer:
    """Splat every scene point (background included) into a min-depth grid."""
    cam = world_to_camera(pose, scene.positions)
    u, v, z, inside = _project_batch(intr, cam)
    grid = np.full((cfg.buffer_h, cfg.buffer_w), np.inf)
    if inside.any():
        cu, cv = _buffer_cells(intr, cfg, u[inside], v[inside])
        np.minimum.at(grid, (cv, cu), z[inside])
    return DepthBuffer(grid=grid)


def visible_instances(
    scene: SceneBundle,
    pose: CameraPose,
    intr: Intrinsics,
    cfg: VisibilityConfig,
) -> set[int]:
    """Ids of non-background instances passing both visibility tests.

    An instance is visible when at least theta_frustum of its points project
    inside the frustum and, among those, at least theta_unoccluded pass the
    depth test against the buffer (depth <= cell minimum + delta_occ). An
    instance with no in-frustum points is never visible, whatever the
    thresholds. Background instances still occlude but are never returned.
    """
    cam = world_to_camera(pose, scene.positions)
    u, v, z, inside = _project_batch(intr, cam)
    grid = np.full((cfg.buffer_h, cfg.buffer_w), np.inf)
    if inside.any():
        cu_all, cv_all = _buffer_cells(intr, cfg, u[inside], v[inside])
        np.minimum.at(grid, (cv_all, cu_all), z[inside])
    buffer = DepthBuffer(grid=grid)

    result: set[int] = set()
    for meta in scene.instances:
        if meta.is_background:
            continue
        idx = meta.point_indices
        inst_inside = inside[idx]
        n_in = int(np.count_nonzero(inst_inside))
        if n_in == 0 or n_in < cfg.theta_frustum * idx.size:
            continue
        sel = idx[inst_inside]
        cu, cv = _buffer_cells(intr, cfg, u[sel], v[sel])
        passing = z[sel] <= buffer.depth_at(cu, cv) + cfg.delta_occ
        if int(np.count_nonzero(passing)) >= cfg.theta_unoccluded * n_in:
            result.add(meta.id)
    return result
