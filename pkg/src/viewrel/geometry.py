"""Pose, frame-transform, box, and interval-gap primitives.

Conventions used throughout the package:
  * poses are camera-to-world 4x4 homogeneous transforms,
  * the camera frame is right-handed with X right, Y down, Z forward
    (the viewing direction), so "left of" means smaller camera X,
  * all distances are meters.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import EmptyGeometryError, ValidationError

# Validity tolerances, fixed for the whole package.
ROTATION_TOL = 1e-6     # orthonormality / determinant of the rotation block
HOMOGENEOUS_TOL = 1e-9  # bottom row of a pose matrix


class Axis(IntEnum):
    X = 0
    Y = 1
    Z = 2


@dataclass(frozen=True, slots=True)
class Interval:
    """Closed interval [lo, hi] on one axis."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValidationError(f"interval bounds must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise ValidationError(f"interval lo {self.lo} exceeds hi {self.hi}")


def interval_gap(a: Interval, b: Interval) -> float:
    """Minimum distance between two intervals; 0 when they overlap or touch."""
    return max(0.0, a.lo - b.hi, b.lo - a.hi)


@dataclass(frozen=True, slots=True)
class Aabb3:
    """Axis-aligned box as one interval per axis."""

    x: Interval
    y: Interval
    z: Interval

    def axis(self, axis: Axis) -> Interval:
        return (self.x, self.y, self.z)[axis]

    def as_array(self) -> np.ndarray:
        """(2, 3) array of [mins; maxs]."""
        return np.array(
            [[self.x.lo, self.y.lo, self.z.lo], [self.x.hi, self.y.hi, self.z.hi]]
        )


def aabb_from_points(points: np.ndarray) -> Aabb3:
    """Tight bounding box of an (N, 3) array of points.

    Raises EmptyGeometryError when the array has no rows.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValidationError(f"expected (N, 3) points, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyGeometryError("cannot build a bounding box from zero points")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Aabb3(
        Interval(float(lo[0]), float(hi[0])),
        Interval(float(lo[1]), float(hi[1])),
        Interval(float(lo[2]), float(hi[2])),
    )


def axis_gap(a: Aabb3, b: Aabb3, axis: Axis) -> float:
    """interval_gap on the selected axis of two boxes."""
    return interval_gap(a.axis(axis), b.axis(axis))


class CameraPose:
    """4x4 homogeneous camera-to-world transform.

    The matrix is validated on construction: bottom row [0,0,0,1], rotation
    block orthonormal with determinant +1 (within the module tolerances).
    """

    __slots__ = ("matrix",)

    def __init__(self, matrix: np.ndarray):
        m = np.array(matrix, dtype=np.float64).reshape(4, 4)
        if not np.all(np.isfinite(m)):
            raise ValidationError("pose matrix contains non-finite entries")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > HOMOGENEOUS_TOL:
            raise ValidationError(f"pose bottom row must be [0,0,0,1], got {m[3].tolist()}")
        r = m[:3, :3]
        if np.max(np.abs(r.T @ r - np.eye(3))) > ROTATION_TOL:
            raise ValidationError("pose rotation block is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise ValidationError("pose rotation block must have determinant +1")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation: np.ndarray) -> "CameraPose":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def __eq__(self, other) -> bool:
        return isinstance(other, CameraPose) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self) -> str:
        t = self.translation
        return f"CameraPose(t=({t[0]:.3f}, {t[1]:.3f}, {t[2]:.3f}))"


def invert_pose(pose: CameraPose) -> CameraPose:
    """World-to-camera transform of a camera-to-world pose (rigid inverse)."""
    r = pose.rotation
    t = pose.translation
    inv = np.eye(4)
    inv[:3, :3] = r.T
    inv[:3, 3] = -r.T @ t
    return CameraPose(inv)


def world_to_camera(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """Map world points into the camera frame of a camera-to-world pose.

    Accepts a single (3,) point or an (N, 3) array and returns the same shape.
    """
    pts = np.asarray(points, dtype=np.float64)
    r = pose.rotation
    t = pose.translation
    if pts.ndim == 1:
        return r.T @ (pts - t)
    return (pts - t) @ r


def camera_to_world(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """Inverse of world_to_camera for the same pose."""
    pts = np.asarray(points, dtype=np.float64)
    r = pose.rotation
    t = pose.translation
    if pts.ndim == 1:
        return r @ pts + t
    return pts @ r.T + t
