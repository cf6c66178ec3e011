"""The six spatial-relation predicates and relation-set algebra.

Left/right and front/behind are evaluated on camera-frame box extents and are
viewpoint-dependent; above/under are evaluated on the world gravity axis and
do not change with the camera. Every predicate additionally requires the two
residual axis gaps to stay below the misalignment threshold tau, and every
inequality is strict: a gap exactly equal to tau fails.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import EmptyGeometryError, ValidationError
from .geometry import Aabb3, Axis, CameraPose, aabb_from_points, axis_gap, world_to_camera


class RelationLabel(IntEnum):
    """Canonical label order; the integer value fixes sort and display order."""

    LEFT = 0
    RIGHT = 1
    FRONT = 2
    BEHIND = 3
    ABOVE = 4
    UNDER = 5

    @property
    def key(self) -> str:
        return self.name.lower()

    @property
    def phrase(self) -> str:
        return _PHRASES[self]

    @classmethod
    def from_key(cls, key: str) -> "RelationLabel":
        try:
            return cls[key.strip().upper()]
        except KeyError:
            raise ValidationError(f"unknown relation label {key!r}") from None


_PHRASES = {
    RelationLabel.LEFT: "to the left of",
    RelationLabel.RIGHT: "to the right of",
    RelationLabel.FRONT: "in front of",
    RelationLabel.BEHIND: "behind",
    RelationLabel.ABOVE: "above",
    RelationLabel.UNDER: "under",
}

# Complementary pairs: a relation set may contain at most one member of each.
_GROUPS = (
    (RelationLabel.LEFT, RelationLabel.RIGHT),
    (RelationLabel.FRONT, RelationLabel.BEHIND),
    (RelationLabel.ABOVE, RelationLabel.UNDER),
)

COMPLEMENT = {
    RelationLabel.LEFT: RelationLabel.RIGHT,
    RelationLabel.RIGHT: RelationLabel.LEFT,
    RelationLabel.FRONT: RelationLabel.BEHIND,
    RelationLabel.BEHIND: RelationLabel.FRONT,
    RelationLabel.ABOVE: RelationLabel.UNDER,
    RelationLabel.UNDER: RelationLabel.ABOVE,
}


@dataclass(frozen=True, slots=True)
class RelationSet:
    """Non-empty combination of relations, at most one per complementary pair.

    Exactly 26 such combinations exist (6 singles, 12 pairs, 8 triples).
    """

    labels: tuple[RelationLabel, ...]

    def __post_init__(self):
        labels = tuple(sorted(set(self.labels)))
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValidationError("relation set must be non-empty")
        if len(labels) > 3:
            raise ValidationError(f"relation set has {len(labels)} labels, maximum is 3")
        for a, b in _GROUPS:
            if a in labels and b in labels:
                raise ValidationError(f"relation set mixes complementary {a.key}/{b.key}")

    @classmethod
    def of(cls, *labels: RelationLabel) -> "RelationSet":
        return cls(tuple(labels))

    @classmethod
    def from_string(cls, text: str) -> "RelationSet":
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if not parts:
            raise ValidationError(f"cannot parse relation set from {text!r}")
        return cls(tuple(RelationLabel.from_key(p) for p in parts))

    @property
    def key(self) -> str:
        """Serialized form, e.g. "left, front, above"."""
        return ", ".join(lbl.key for lbl in self.labels)

    def __contains__(self, label: RelationLabel) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def sort_index(self) -> tuple:
        """Canonical category order: singles, then pairs, then triples."""
        return (len(self.labels), tuple(int(lbl) for lbl in self.labels))


def valid_relation_sets() -> list[RelationSet]:
    """All 26 relation categories in canonical order."""
    out = []
    for size in (1, 2, 3):
        for combo in itertools.combinations(RelationLabel, size):
            if any(a in combo and b in combo for a, b in _GROUPS):
                continue
            out.append(RelationSet(combo))
    return out


@dataclass(frozen=True, slots=True)
class RelationConfig:
    """Predicate parameters: misalignment threshold and world gravity axis."""

    tau: float = 0.5
    up_axis: Axis = Axis.Z

    def __post_init__(self):
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau}")

    def as_dict(self) -> dict:
        return {"tau": self.tau, "up_axis": self.up_axis.name.lower()}

    @classmethod
    def from_dict(cls, d: dict) -> "RelationConfig":
        try:
            axis = Axis[str(d["up_axis"]).upper()]
        except KeyError:
            raise ValidationError(f"bad up_axis {d.get('up_axis')!r}") from None
        return cls(tau=d["tau"], up_axis=axis)


@dataclass(frozen=True, slots=True)
class InstanceFrameBoxes:
    """Per-viewpoint box pair of one instance.

    cam_box is recomputed from the instance's raw points in the camera frame
    of the viewpoint (never by transforming world-box corners); world_box is
    the box of the same points in world coordinates.
    """

    instance_id: int
    cam_box: Aabb3
    world_box: Aabb3


def frame_boxes(instance_id: int, points_world: np.ndarray, pose: CameraPose) -> InstanceFrameBoxes:
    """Build InstanceFrameBoxes for one instance at one viewpoint."""
    pts = np.asarray(points_world, dtype=np.float64)
    if pts.size == 0:
        raise EmptyGeometryError(f"instance {instance_id} has no points")
    return InstanceFrameBoxes(
        instance_id=instance_id,
        cam_box=aabb_from_points(world_to_camera(pose, pts)),
        world_box=aabb_from_points(pts),
    )


def _residual_axes(up_axis: Axis) -> tuple[Axis, Axis]:
    return tuple(a for a in (Axis.X, Axis.Y, Axis.Z) if a != up_axis)  # type: ignore[return-value]


def holds(
    relation: RelationLabel,
    target: InstanceFrameBoxes,
    anchor: InstanceFrameBoxes,
    cfg: RelationConfig,
) -> bool:
    """Whether `target <relation> anchor` holds at this viewpoint.

    The target plays the moving role (left of, above, ...) and the anchor is
    the reference object. All separation and gap inequalities are strict.
    """
    if target.instance_id == anchor.instance_id:
        raise ValidationError("target and anchor must be distinct instances")
    tau = cfg.tau
    tc, ac = target.cam_box, anchor.cam_box
    if relation is RelationLabel.LEFT:
        return (
            tc.x.hi < ac.x.lo
            and axis_gap(tc, ac, Axis.Y) < tau
            and axis_gap(tc, ac, Axis.Z) < tau
        )
    if relation is RelationLabel.RIGHT:
        return (
            tc.x.lo > ac.x.hi
            and axis_gap(tc, ac, Axis.Y) < tau
            and axis_gap(tc, ac, Axis.Z) < tau
        )
    if relation is RelationLabel.FRONT:
        return (
            tc.z.hi < ac.z.lo
            and axis_gap(tc, ac, Axis.X) < tau
            and axis_gap(tc, ac, Axis.Y) < tau
        )
    if relation is RelationLabel.BEHIND:
        return (
            tc.z.lo > ac.z.hi
            and axis_gap(tc, ac, Axis.X) < tau
            and axis_gap(tc, ac, Axis.Y) < tau
        )
    # Above/under use world-frame intervals only, so they are identical for
    # every camera pose.
    tw, aw = target.world_box, anchor.world_box
    up = cfg.up_axis
    res_a, res_b = _residual_axes(up)
    gaps_ok = axis_gap(tw, aw, res_a) < tau and axis_gap(tw, aw, res_b) < tau
    if relation is RelationLabel.ABOVE:
        return tw.axis(up).lo > aw.axis(up).hi and gaps_ok
    if relation is RelationLabel.UNDER:
        return tw.axis(up).hi < aw.axis(up).lo and gaps_ok
    raise ValidationError(f"unknown relation {relation!r}")


def relations_between(
    target: InstanceFrameBoxes, anchor: InstanceFrameBoxes, cfg: RelationConfig
) -> set[RelationLabel]:
    """All relations that hold for (target, anchor); each evaluated independently."""
    return {r for r in RelationLabel if holds(r, target, anchor, cfg)}


def pointwise_oracle(
    relation: RelationLabel,
    target_points_world,
    anchor_points_world,
    pose: CameraPose,
    cfg: RelationConfig,
) -> bool:
    """Independent re-decision of `holds` for differential testing.

    Streams raw points one at a time, transforms each into the camera frame
    with explicit scalar arithmetic, tracks running per-axis extents without
    building box values, and evaluates the same strict inequalities. Kept
    deliberately free of the geometry helpers it cross-checks.
    """
    m = pose.matrix
    r00, r01, r02, t0 = m[0][0], m[0][1], m[0][2], m[0][3]
    r10, r11, r12, t1 = m[1][0], m[1][1], m[1][2], m[1][3]
    r20, r21, r22, t2 = m[2][0], m[2][1], m[2][2], m[2][3]

    def extents(points):
        cam_lo = [float("inf")] * 3
        cam_hi = [float("-inf")] * 3
        wrl_lo = [float("inf")] * 3
        wrl_hi = [float("-inf")] * 3
        n = 0
        for p in points:
            wx, wy, wz = float(p[0]), float(p[1]), float(p[2])
            dx, dy, dz = wx - t0, wy - t1, wz - t2
            # R^T * (p - t), spelled out
            cx = r00 * dx + r10 * dy + r20 * dz
            cy = r01 * dx + r11 * dy + r21 * dz
            cz = r02 * dx + r12 * dy + r22 * dz
            for i, v in enumerate((cx, cy, cz)):
                if v < cam_lo[i]:
                    cam_lo[i] = v
                if v > cam_hi[i]:
                    cam_hi[i] = v
            for i, v in enumerate((wx, wy, wz)):
                if v < wrl_lo[i]:
                    wrl_lo[i] = v
                if v > wrl_hi[i]:
                    wrl_hi[i] = v
            n += 1
        if n == 0:
            raise EmptyGeometryError("oracle requires a non-empty point set")
        return cam_lo, cam_hi, wrl_lo, wrl_hi

    t_cam_lo, t_cam_hi, t_w_lo, t_w_hi = extents(target_points_world)
    a_cam_lo, a_cam_hi, a_w_lo, a_w_hi = extents(anchor_points_world)

    def gap(lo_a, hi_a, lo_b, hi_b, i):
        return max(0.0, lo_a[i] - hi_b[i], lo_b[i] - hi_a[i])

    tau = cfg.tau
    if relation is RelationLabel.LEFT:
        return (
            t_cam_hi[0] < a_cam_lo[0]
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 1) < tau
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 2) < tau
        )
    if relation is RelationLabel.RIGHT:
        return (
            t_cam_lo[0] > a_cam_hi[0]
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 1) < tau
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 2) < tau
        )
    if relation is RelationLabel.FRONT:
        return (
            t_cam_hi[2] < a_cam_lo[2]
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 0) < tau
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 1) < tau
        )
    if relation is RelationLabel.BEHIND:
        return (
            t_cam_lo[2] > a_cam_hi[2]
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 0) < tau
            and gap(t_cam_lo, t_cam_hi, a_cam_lo, a_cam_hi, 1) < tau
        )
    up = int(cfg.up_axis)
    res = [i for i in range(3) if i != up]
    gaps_ok = (
        gap(t_w_lo, t_w_hi, a_w_lo, a_w_hi, res[0]) < tau
        and gap(t_w_lo, t_w_hi, a_w_lo, a_w_hi, res[1]) < tau
    )
    if relation is RelationLabel.ABOVE:
        return t_w_lo[up] > a_w_hi[up] and gaps_ok
    if relation is RelationLabel.UNDER:
        return t_w_hi[up] < a_w_lo[up] and gaps_ok
    raise ValidationError(f"unknown relation {relation!r}")
