"""Construction helpers shared across test modules.

Kept deliberately independent of the library internals so they can serve as
reference implementations: look_at builds a pose from first principles and
box_cloud pins the exact AABB by always including all eight corners.
"""

import numpy as np

from viewrel.geometry import CameraPose

_CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [-1, -1, 1],
        [-1, 1, -1],
        [-1, 1, 1],
        [1, -1, -1],
        [1, -1, 1],
        [1, 1, -1],
        [1, 1, 1],
    ],
    dtype=float,
)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix via a random unit quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def random_pose(rng: np.random.Generator, span: float = 4.0) -> CameraPose:
    return CameraPose.from_rotation_translation(
        random_rotation(rng), rng.uniform(-span, span, size=3)
    )


def box_cloud(rng: np.random.Generator, center, half, extra: int = 4) -> np.ndarray:
    """Points whose AABB is exactly center +- half: all corners plus interior samples."""
    center = np.asarray(center, dtype=float)
    half = np.asarray(half, dtype=float)
    corners = center + half * _CORNER_SIGNS
    if extra <= 0:
        return corners
    inner = center + half * rng.uniform(-1.0, 1.0, size=(extra, 3))
    return np.vstack([corners, inner])


def boxes_scene(rng, specs, trajectory=(), scene_id="fixture"):
    """SceneBundle of corner-pinned box clouds.

    specs: sequence of (label, center, half) or (label, center, half, n_extra).
    Instance ids follow spec order.
    """
    from viewrel.scene import SceneBundle

    positions = []
    ids = []
    labels = {}
    for i, spec in enumerate(specs):
        label, center, half = spec[0], spec[1], spec[2]
        extra = spec[3] if len(spec) > 3 else 12
        pts = box_cloud(rng, center, half, extra=extra)
        positions.append(pts)
        ids.append(np.full(len(pts), i, dtype=np.int32))
        labels[i] = label
    all_pts = np.vstack(positions)
    return SceneBundle.build(
        scene_id=scene_id,
        positions=all_pts.astype(np.float32),
        colors=np.zeros((len(all_pts), 3), dtype=np.uint8),
        point_instance=np.concatenate(ids),
        labels=labels,
        trajectory=tuple(trajectory),
    )


def look_at(camera, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose at `camera` with +Z toward `target`, +X right, +Y down."""
    camera = np.asarray(camera, dtype=float)
    forward = np.asarray(target, dtype=float) - camera
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-8:
        raise ValueError("viewing direction parallel to up vector")
    right = right / norm
    down = np.cross(forward, right)
    rotation = np.column_stack([right, down, forward])
    return CameraPose.from_rotation_translation(rotation, camera)
