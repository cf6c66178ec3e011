"""Independent re-evaluation of the six spatial predicates over a dataset.

The formulas are coded here from scratch, against raw extents arrays instead
of the generator's box types: a target is left/right/front/behind the anchor
when its camera-frame extent clears the anchor's on the primary axis
(strictly) and the two residual-axis gaps stay under tau; above/under use
world-frame extents around the gravity axis the same way, so they cannot
depend on the pose. All comparisons are strict.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClientError
from .reader import DatasetHandle, LoadedScene, sample_identity

# relation name -> (primary axis, target side, residual axes), camera frame
_LATERAL = {
    "left": (0, -1, (1, 2)),
    "right": (0, +1, (1, 2)),
    "front": (2, -1, (0, 1)),
    "behind": (2, +1, (0, 1)),
}
_VERTICAL_SIDE = {"above": +1, "under": -1}


def _extents(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return points.min(axis=0), points.max(axis=0)


def _axis_gap(t, a, axis: int) -> float:
    (t_lo, t_hi), (a_lo, a_hi) = t, a
    separation = max(t_lo[axis] - a_hi[axis], a_lo[axis] - t_hi[axis])
    return separation if separation > 0.0 else 0.0


def _separated(t, a, axis: int, side: int) -> bool:
    (t_lo, t_hi), (a_lo, a_hi) = t, a
    if side < 0:
        return t_hi[axis] < a_lo[axis]
    return t_lo[axis] > a_hi[axis]


def relation_holds(
    name: str,
    t_cam,
    a_cam,
    t_world,
    a_world,
    tau: float,
    up_axis: int,
) -> bool:
    """Decide one predicate from (lo, hi) extent pairs per frame."""
    if name in _LATERAL:
        axis, side, residual = _LATERAL[name]
        return _separated(t_cam, a_cam, axis, side) and all(
            _axis_gap(t_cam, a_cam, r) < tau for r in residual
        )
    side = _VERTICAL_SIDE.get(name)
    if side is None:
        raise ClientError(f"unknown relation {name!r}")
    residual = tuple(r for r in range(3) if r != up_axis)
    return _separated(t_world, a_world, up_axis, side) and all(
        _axis_gap(t_world, a_world, r) < tau for r in residual
    )


class _SceneGeometry:
    """Extent cache for one scene: world once, camera per viewpoint."""

    def __init__(self, scene: LoadedScene):
        self.scene = scene
        self._world: dict[int, tuple] = {}
        self._cam: dict[tuple[int, int], tuple] = {}

    def _points(self, instance_id: int) -> np.ndarray:
        return self.scene.positions[self.scene.mask(instance_id)].astype(np.float64)

    def world(self, instance_id: int):
        box = self._world.get(instance_id)
        if box is None:
            box = _extents(self._points(instance_id))
            self._world[instance_id] = box
        return box

    def camera(self, instance_id: int, viewpoint_id: int, pose: np.ndarray):
        key = (instance_id, viewpoint_id)
        box = self._cam.get(key)
        if box is None:
            rotation = pose[:3, :3]
            translation = pose[:3, 3]
            box = _extents((self._points(instance_id) - translation) @ rotation)
            self._cam[key] = box
        return box


@dataclass(frozen=True)
class Violation:
    sample_id: str
    reason: str


@dataclass
class ValidationReport:
    tau: float
    checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        state = "ok" if self.ok else f"{len(self.violations)} violation(s)"
        return f"checked {self.checked} samples at tau={self.tau:g}: {state}"


def revalidate(handle: DatasetHandle, tau: float | None = None) -> ValidationReport:
    """Re-derive every sample's claims from the scene bytes and report failures.

    Checks, per sample: the content-hash identity of sample_id, the pose
    against the bundle trajectory, target-list hygiene, and every
    (target, relation) predicate. Passing a different tau re-decides the
    predicates at that threshold, which is how a threshold disagreement
    between producer and consumer is surfaced.
    """
    if tau is None:
        tau = handle.tau
    report = ValidationReport(tau=tau)
    geometries: dict[str, _SceneGeometry] = {}

    def flag(sample, reason: str) -> None:
        report.violations.append(Violation(sample.sample_id, reason))

    for sample in handle:
        report.checked += 1
        scene = sample.scene
        geo = geometries.get(scene.scene_id)
        if geo is None:
            geometries.clear()  # shard-major iteration: one scene at a time
            geo = _SceneGeometry(scene)
            geometries[scene.scene_id] = geo

        expected_id = sample_identity(
            sample.scene_id, sample.viewpoint_id, sample.anchor_id, sample.relations
        )
        if sample.sample_id != expected_id:
            flag(sample, f"sample_id does not match content hash {expected_id}")
            continue

        if not 0 <= sample.viewpoint_id < len(scene.trajectory):
            flag(sample, f"viewpoint {sample.viewpoint_id} outside trajectory")
            continue
        if not np.array_equal(sample.pose, scene.trajectory[sample.viewpoint_id]):
            flag(sample, f"pose disagrees with trajectory entry {sample.viewpoint_id}")
            continue

        if sample.anchor_id not in scene.instances:
            flag(sample, f"anchor {sample.anchor_id} is not a scene instance")
            continue
        if not sample.target_ids:
            flag(sample, "sample has no targets")
            continue
        if list(sample.target_ids) != sorted(set(sample.target_ids)):
            flag(sample, "target_ids are not sorted and unique")
            continue
        if sample.anchor_id in sample.target_ids:
            flag(sample, f"anchor {sample.anchor_id} appears among its targets")
            continue
        missing = [t for t in sample.target_ids if t not in scene.instances]
        if missing:
            flag(sample, f"targets {missing} are not scene instances")
            continue

        a_cam = geo.camera(sample.anchor_id, sample.viewpoint_id, sample.pose)
        a_world = geo.world(sample.anchor_id)
        for t in sample.target_ids:
            t_cam = geo.camera(t, sample.viewpoint_id, sample.pose)
            t_world = geo.world(t)
            for name in sample.relations:
                if not relation_holds(
                    name, t_cam, a_cam, t_world, a_world, tau, scene.up_axis
                ):
                    flag(
                        sample,
                        f"target {t} is not {name!r} of anchor {sample.anchor_id} "
                        f"at viewpoint {sample.viewpoint_id}",
                    )
    return report
