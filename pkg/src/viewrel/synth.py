"""Procedural room generator used for fixtures and desk-scale experiments.

Rooms are boxes of surface-sampled instances over floor/wall background
sheets. Everything is a pure function of the config, so regenerating with the
same seed reproduces a scene bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import CapacityError, ValidationError
from .geometry import CameraPose
from .scene import SceneBundle
from .visibility import Intrinsics, VisibilityConfig, visible_instances

LABEL_VOCABULARY = (
    "chair", "table", "sofa", "bed", "desk",
    "cabinet", "bookshelf", "lamp", "monitor", "plant",
    "crate", "bin", "stool", "dresser", "nightstand",
    "bench", "ottoman", "shelf", "printer", "suitcase",
)

_PLACEMENT_ATTEMPTS = 200
_SCENE_ATTEMPTS = 30
_WALL_MARGIN = 0.3
_EYE_HEIGHT = 1.6

ORBIT = "orbit"
TRAJECTORY_WALK = "trajectory-walk"


@dataclass(frozen=True, slots=True)
class SynthConfig:
    seed: int = 0
    room_extents: tuple[float, float, float] = (8.0, 8.0, 3.0)
    n_instances: int = 8
    points_per_instance: int = 96
    size_range: tuple[float, float] = (0.25, 0.9)
    background_density: float = 40.0
    pose_count: int = 12
    pose_strategy: str = ORBIT
    stack_prob: float = 0.35
    scene_id: str | None = None

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValidationError(f"n_instances must be at least 1, got {self.n_instances}")
        if any(e <= 0 for e in self.room_extents):
            raise ValidationError(f"room extents must be positive, got {self.room_extents}")
        if self.points_per_instance < 8:
            raise ValidationError("points_per_instance must be at least 8 (box corners)")
        lo, hi = self.size_range
        if not (0 < lo <= hi):
            raise ValidationError(f"bad size_range {self.size_range}")
        if self.background_density < 0:
            raise ValidationError("background_density must be non-negative")
        if self.pose_count < 1:
            raise ValidationError("pose_count must be at least 1")
        if self.pose_strategy not in (ORBIT, TRAJECTORY_WALK):
            raise ValidationError(f"unknown pose_strategy {self.pose_strategy!r}")
        if not (0.0 <= self.stack_prob <= 1.0):
            raise ValidationError("stack_prob must be in [0, 1]")

    @property
    def resolved_scene_id(self) -> str:
        return self.scene_id if self.scene_id else f"synth-{self.seed:08d}"


def look_at(camera, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Pose at `camera` with +Z toward `target`, +X right, +Y down."""
    camera = np.asarray(camera, dtype=float)
    forward = np.asarray(target, dtype=float) - camera
    norm = np.linalg.norm(forward)
    if norm < 1e-9:
        raise ValidationError("look_at camera and target coincide")
    forward = forward / norm
    right = np.cross(forward, np.asarray(up, dtype=float))
    norm = np.linalg.norm(right)
    if norm < 1e-8:
        raise ValidationError("viewing direction parallel to up vector")
    right = right / norm
    down = np.cross(forward, right)
    rotation = np.column_stack([right, down, forward])
    return CameraPose.from_rotation_translation(rotation, camera)


def _overlaps(center, half, others) -> bool:
    for oc, oh in others:
        if all(abs(center[k] - oc[k]) < half[k] + oh[k] for k in range(3)):
            return True
    return False


def _place_boxes(rng, cfg: SynthConfig, forced=()):
    """Rejection-sample non-interpenetrating box placements.

    `forced` boxes are accepted as-is and count toward n_instances. Some boxes
    stack on earlier ones (vertical gap, jittered footprint) so above/under
    arrangements occur at a useful rate.
    """
    lx, ly, lz = cfg.room_extents
    lo, hi = cfg.size_range
    boxes = [(np.asarray(c, float), np.asarray(h, float)) for c, h in forced]
    while len(boxes) < cfg.n_instances:
        for _ in range(_PLACEMENT_ATTEMPTS):
            half = rng.uniform(lo, hi, size=3) / 2.0
            stacked = bool(boxes) and rng.random() < cfg.stack_prob
            if stacked:
                pc, ph = boxes[rng.integers(len(boxes))]
                base = pc[2] + ph[2] + rng.uniform(0.05, 0.3)
                if base + 2 * half[2] > lz - 0.1:
                    continue
                jitter = rng.uniform(-0.5, 0.5, size=2) * ph[:2]
                center = np.array([pc[0] + jitter[0], pc[1] + jitter[1], base + half[2]])
                if abs(center[0]) + half[0] > lx / 2 - _WALL_MARGIN:
                    continue
                if abs(center[1]) + half[1] > ly / 2 - _WALL_MARGIN:
                    continue
            else:
                span_x = lx / 2 - half[0] - _WALL_MARGIN
                span_y = ly / 2 - half[1] - _WALL_MARGIN
                if span_x <= 0 or span_y <= 0 or 2 * half[2] > lz - 0.2:
                    continue
                base = rng.uniform(0.0, min(1.2, lz - 2 * half[2] - 0.2))
                center = np.array([
                    rng.uniform(-span_x, span_x),
                    rng.uniform(-span_y, span_y),
                    base + half[2],
                ])
            if not _overlaps(center, half, boxes):
                boxes.append((center, half))
                break
        else:
            raise CapacityError(
                f"could not place {cfg.n_instances} instances in a "
                f"{lx}x{ly}x{lz} room; reduce n_instances or enlarge the room"
            )
    return boxes


_FACES = (
    # (fixed axis, sign)
    (0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1),
)

_CORNER_SIGNS = np.array(
    [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
    dtype=float,
)


def _sample_box_surface(rng, center, half, count):
    """All eight corners (pinning the exact AABB) plus area-weighted face samples."""
    pts = [center + _CORNER_SIGNS * half]
    remaining = count - 8
    if remaining > 0:
        areas = np.array([half[1] * half[2], half[1] * half[2],
                          half[0] * half[2], half[0] * half[2],
                          half[0] * half[1], half[0] * half[1]])
        weights = areas / areas.sum()
        choices = rng.choice(6, size=remaining, p=weights)
        offs = rng.uniform(-1.0, 1.0, size=(remaining, 3)) * half
        for i, face in enumerate(choices):
            axis, sign = _FACES[face]
            offs[i, axis] = sign * half[axis]
        pts.append(center + offs)
    return np.vstack(pts)


def _background_sheets(rng, cfg: SynthConfig):
    """Floor and wall point sheets; returns (floor_pts, wall_pts)."""
    lx, ly, lz = cfg.room_extents

    def sheet(count, builder):
        if count <= 0:
            return np.zeros((0, 3))
        return builder(rng.uniform(0.0, 1.0, size=(count, 2)))

    floor = sheet(
        int(round(cfg.background_density * lx * ly)),
        lambda q: np.column_stack([(q[:, 0] - 0.5) * lx, (q[:, 1] - 0.5) * ly, np.zeros(len(q))]),
    )
    walls = []
    for count, builder in (
        (int(round(cfg.background_density * ly * lz)),
         lambda q: np.column_stack([np.full(len(q), -lx / 2), (q[:, 0] - 0.5) * ly, q[:, 1] * lz])),
        (int(round(cfg.background_density * ly * lz)),
         lambda q: np.column_stack([np.full(len(q), lx / 2), (q[:, 0] - 0.5) * ly, q[:, 1] * lz])),
        (int(round(cfg.background_density * lx * lz)),
         lambda q: np.column_stack([(q[:, 0] - 0.5) * lx, np.full(len(q), -ly / 2), q[:, 1] * lz])),
        (int(round(cfg.background_density * lx * lz)),
         lambda q: np.column_stack([(q[:, 0] - 0.5) * lx, np.full(len(q), ly / 2), q[:, 1] * lz])),
    ):
        walls.append(sheet(count, builder))
    return floor, np.vstack(walls) if walls else np.zeros((0, 3))


def _orbit_trajectory(rng, cfg: SynthConfig):
    lx, ly, lz = cfg.room_extents
    radius = 0.42 * min(lx, ly)
    height = min(_EYE_HEIGHT, lz - 0.2)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    focus = np.array([0.0, 0.0, min(1.0, lz / 2)])
    poses = []
    for k in range(cfg.pose_count):
        ang = phase + 2.0 * math.pi * k / cfg.pose_count
        eye = np.array([radius * math.cos(ang), radius * math.sin(ang), height])
        poses.append(look_at(eye, focus))
    return tuple(poses)


def _walk_trajectory(rng, cfg: SynthConfig):
    lx, ly, lz = cfg.room_extents
    height = min(_EYE_HEIGHT, lz - 0.2)
    span = np.array([lx / 2 - 0.6, ly / 2 - 0.6])
    pos = rng.uniform(-0.5, 0.5, size=2) * span
    poses = []
    for _ in range(cfg.pose_count):
        pos = np.clip(pos + rng.uniform(-1.0, 1.0, size=2), -span, span)
        eye = np.array([pos[0], pos[1], height])
        for _ in range(20):
            focus = np.array([
                rng.uniform(-1.5, 1.5),
                rng.uniform(-1.5, 1.5),
                rng.uniform(0.6, 1.6),
            ])
            if np.linalg.norm(focus[:2] - eye[:2]) > 0.3:
                break
        poses.append(look_at(eye, focus))
    return tuple(poses)


def _assemble(rng, cfg: SynthConfig, boxes, trajectory) -> SceneBundle:
    positions = []
    instance_ids = []
    labels = {}
    for i, (center, half) in enumerate(boxes):
        pts = _sample_box_surface(rng, center, half, cfg.points_per_instance)
        positions.append(pts)
        instance_ids.append(np.full(len(pts), i, dtype=np.int32))
        labels[i] = LABEL_VOCABULARY[rng.integers(len(LABEL_VOCABULARY))]
    floor, walls = _background_sheets(rng, cfg)
    next_id = len(boxes)
    if len(floor):
        positions.append(floor)
        instance_ids.append(np.full(len(floor), next_id, dtype=np.int32))
        labels[next_id] = "floor"
        next_id += 1
    if len(walls):
        positions.append(walls)
        instance_ids.append(np.full(len(walls), next_id, dtype=np.int32))
        labels[next_id] = "wall"
    all_pts = np.vstack(positions).astype(np.float32)
    all_ids = np.concatenate(instance_ids)
    colors = rng.integers(0, 256, size=(len(all_pts), 3), dtype=np.int64).astype(np.uint8)
    return SceneBundle.build(
        scene_id=cfg.resolved_scene_id,
        positions=all_pts,
        colors=colors,
        point_instance=all_ids,
        labels=labels,
        trajectory=trajectory,
    )


def _all_instances_visible(scene: SceneBundle, poses) -> bool:
    intr = Intrinsics()
    vis_cfg = VisibilityConfig()
    wanted = {m.id for m in scene.instances if not m.is_background}
    seen: set[int] = set()
    for pose in poses:
        seen |= visible_instances(scene, pose, intr, vis_cfg)
        if seen >= wanted:
            return True
    return seen >= wanted


def make_room(cfg: SynthConfig) -> SceneBundle:
    """One procedural room; every instance is visible from some trajectory pose."""
    for attempt in range(_SCENE_ATTEMPTS):
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, attempt])
        boxes = _place_boxes(rng, cfg)
        if cfg.pose_strategy == ORBIT:
            trajectory = _orbit_trajectory(rng, cfg)
        else:
            trajectory = _walk_trajectory(rng, cfg)
        scene = _assemble(rng, cfg, boxes, trajectory)
        if _all_instances_visible(scene, trajectory):
            return scene
    raise CapacityError(
        f"no arrangement with all instances visible after {_SCENE_ATTEMPTS} attempts; "
        "reduce n_instances or background_density"
    )


def make_opposed_pair(cfg: SynthConfig) -> tuple[SceneBundle, CameraPose, CameraPose]:
    """A room plus two poses facing each other across the room center.

    The poses sit at the same distance from the center, 180 degrees apart, both
    looking at the center. Two instances are placed symmetrically along the
    horizontal axis perpendicular to the view direction, so at least one
    left/right pair exists from either pose; both of those instances are
    visible from both poses. The returned scene's trajectory is exactly
    (pose_a, pose_b).
    """
    lx, ly, lz = cfg.room_extents
    if cfg.n_instances < 2:
        raise ValidationError("make_opposed_pair needs n_instances >= 2")
    for attempt in range(_SCENE_ATTEMPTS):
        rng = np.random.default_rng([cfg.seed & 0xFFFFFFFFFFFFFFFF, 1000 + attempt])
        theta = rng.uniform(0.0, 2.0 * math.pi)
        view_dir = np.array([math.cos(theta), math.sin(theta)])
        side_dir = np.array([-math.sin(theta), math.cos(theta)])
        radius = 0.42 * min(lx, ly)
        # level gaze at box height: the two camera frames then differ by an
        # exact 180 degree yaw, so every camera-frame coordinate negates or
        # shifts cleanly and lateral relations flip exactly between the poses
        height = min(1.2, lz - 0.2)
        focus = np.array([0.0, 0.0, height])
        eye_a = np.array([radius * view_dir[0], radius * view_dir[1], height])
        eye_b = np.array([-radius * view_dir[0], -radius * view_dir[1], height])
        pose_a = look_at(eye_a, focus)
        pose_b = look_at(eye_b, focus)

        lo, hi = cfg.size_range
        offset = rng.uniform(0.9, 1.3)
        base = rng.uniform(0.0, 0.2)
        forced = []
        for sign in (1.0, -1.0):
            half = rng.uniform(lo, min(hi, 0.8), size=3) / 2.0
            center = np.array([
                sign * offset * side_dir[0],
                sign * offset * side_dir[1],
                base + half[2],
            ])
            forced.append((center, half))
        if _overlaps(forced[0][0], forced[0][1], [forced[1]]):
            continue
        boxes = _place_boxes(rng, cfg, forced=forced)
        scene = _assemble(rng, cfg, boxes, (pose_a, pose_b))
        if not _all_instances_visible(scene, (pose_a, pose_b)):
            continue
        intr = Intrinsics()
        vis_cfg = VisibilityConfig()
        vis_a = visible_instances(scene, pose_a, intr, vis_cfg)
        vis_b = visible_instances(scene, pose_b, intr, vis_cfg)
        if {0, 1} <= vis_a and {0, 1} <= vis_b:
            return scene, pose_a, pose_b
    raise CapacityError(
        f"no opposed-pair arrangement found after {_SCENE_ATTEMPTS} attempts; "
        "reduce n_instances or background_density"
    )


def room_variant(cfg: SynthConfig, seed: int) -> SynthConfig:
    """Same generation parameters, different seed (and thus scene id)."""
    return replace(cfg, seed=seed, scene_id=None)
