"""Scene representation and the on-disk bundle format.

A bundle is a directory holding manifest.json plus two little-endian binary
files: points.bin (per point: 3x float32 position, 3x uint8 color, 1x int32
instance id, -1 for unassigned) and trajectory.bin (per pose: 16 float64,
row-major camera-to-world). Writing is byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, ValidationError, VersionError
from .geometry import Aabb3, Axis, CameraPose, aabb_from_points

BUNDLE_FORMAT = "viewrel-bundle"
BUNDLE_VERSION = 1
MANIFEST_NAME = "manifest.json"
POINTS_NAME = "points.bin"
TRAJECTORY_NAME = "trajectory.bin"

POINT_DTYPE = np.dtype([("pos", "<f4", (3,)), ("rgb", "u1", (3,)), ("inst", "<i4")])

DEFAULT_BACKGROUND_LABELS = frozenset({"wall", "floor", "ceiling"})

UNASSIGNED = -1


@dataclass(frozen=True)
class InstanceMeta:
    """One annotated object instance."""

    id: int
    label: str
    is_background: bool
    point_indices: np.ndarray
    world_aabb: Aabb3

    @property
    def point_count(self) -> int:
        return int(self.point_indices.size)


@dataclass(frozen=True)
class SceneBundle:
    """Instance-labeled colored point cloud with a pose trajectory.

    Immutable after construction; safe to share across workers.
    """

    scene_id: str
    positions: np.ndarray      # (N, 3) float32
    colors: np.ndarray         # (N, 3) uint8
    point_instance: np.ndarray  # (N,) int32, UNASSIGNED for background-free points
    instances: tuple[InstanceMeta, ...]
    up_axis: Axis
    trajectory: tuple[CameraPose, ...]
    background_labels: frozenset[str]

    @classmethod
    def build(
        cls,
        scene_id: str,
        positions: np.ndarray,
        colors: np.ndarray,
        point_instance: np.ndarray,
        labels: dict[int, str],
        up_axis: Axis = Axis.Z,
        trajectory: tuple[CameraPose, ...] = (),
        background_labels: frozenset[str] = DEFAULT_BACKGROUND_LABELS,
    ) -> "SceneBundle":
        """Derive InstanceMeta records from a per-point instance map and validate."""
        positions = np.ascontiguousarray(positions, dtype=np.float32)
        colors = np.ascontiguousarray(colors, dtype=np.uint8)
        point_instance = np.ascontiguousarray(point_instance, dtype=np.int32)
        background = frozenset(s.lower() for s in background_labels)
        instances = []
        for inst_id in sorted(labels):
            idx = np.flatnonzero(point_instance == inst_id)
            label = labels[inst_id]
            if idx.size == 0:
                raise ValidationError(f"instance {inst_id} ({label!r}) owns no points")
            instances.append(
                InstanceMeta(
                    id=int(inst_id),
                    label=label,
                    is_background=label.lower() in background,
                    point_indices=idx,
                    world_aabb=aabb_from_points(positions[idx]),
                )
            )
        scene = cls(
            scene_id=scene_id,
            positions=positions,
            colors=colors,
            point_instance=point_instance,
            instances=tuple(instances),
            up_axis=up_axis,
            trajectory=tuple(trajectory),
            background_labels=background,
        )
        scene.validate()
        return scene

    @property
    def point_count(self) -> int:
        return int(self.positions.shape[0])

    def instance(self, inst_id: int) -> InstanceMeta:
        inst = self._by_id().get(inst_id)
        if inst is None:
            raise ValidationError(f"scene {self.scene_id} has no instance {inst_id}")
        return inst

    def _by_id(self) -> dict[int, InstanceMeta]:
        cache = getattr(self, "_id_cache", None)
        if cache is None:
            cache = {m.id: m for m in self.instances}
            object.__setattr__(self, "_id_cache", cache)
        return cache

    def validate(self) -> None:
        """Re-check every type invariant; raises ValidationError on the first hit."""
        n = self.point_count
        if self.colors.shape != (n, 3):
            raise ValidationError(f"colors shape {self.colors.shape} does not match {n} points")
        if self.point_instance.shape != (n,):
            raise ValidationError(
                f"point_instance length {self.point_instance.shape[0]} does not match {n} points"
            )
        if not np.all(np.isfinite(self.positions)):
            raise ValidationError("positions contain non-finite values")
        ids = [m.id for m in self.instances]
        if len(ids) != len(set(ids)):
            raise ValidationError(f"duplicate instance ids in scene {self.scene_id}")
        known = set(ids)
        referenced = set(np.unique(self.point_instance).tolist()) - {UNASSIGNED}
        dangling = referenced - known
        if dangling:
            raise ValidationError(
                f"point_instance references unknown instance ids {sorted(dangling)}"
            )
        for meta in self.instances:
            if meta.point_count == 0:
                raise ValidationError(f"instance {meta.id} owns no points")
            if not np.array_equal(meta.point_indices, np.flatnonzero(self.point_instance == meta.id)):
                raise ValidationError(f"instance {meta.id} point_indices disagree with point_instance")
            expected_bg = meta.label.lower() in self.background_labels
            if meta.is_background != expected_bg:
                raise ValidationError(
                    f"instance {meta.id} is_background={meta.is_background} "
                    f"but label {meta.label!r} implies {expected_bg}"
                )


def instance_points(scene: SceneBundle, inst_id: int) -> np.ndarray:
    """World positions of exactly the points owned by one instance, in index order."""
    return scene.positions[scene.instance(inst_id).point_indices]


def content_checksum(scene: SceneBundle) -> str:
    """sha256 over the packed point records and the trajectory.

    Identifies everything a dataset derives from: geometry, instance
    assignment, and the poses viewpoints are selected from.
    """
    hasher = hashlib.sha256(_packed_points(scene).tobytes())
    for pose in scene.trajectory:
        hasher.update(pose.matrix.astype("<f8").tobytes())
    return hasher.hexdigest()


def _packed_points(scene: SceneBundle) -> np.ndarray:
    rec = np.empty(scene.point_count, dtype=POINT_DTYPE)
    rec["pos"] = scene.positions
    rec["rgb"] = scene.colors
    rec["inst"] = scene.point_instance
    return rec


def save_bundle(scene: SceneBundle, path: str | Path) -> None:
    """Write a scene to a bundle directory (created if needed)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    points_bytes = _packed_points(scene).tobytes()
    traj = np.stack([p.matrix for p in scene.trajectory]) if scene.trajectory else np.zeros((0, 4, 4))
    traj_bytes = np.ascontiguousarray(traj, dtype="<f8").tobytes()
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "scene_id": scene.scene_id,
        "up_axis": scene.up_axis.name.lower(),
        "point_count": scene.point_count,
        "pose_count": len(scene.trajectory),
        "background_labels": sorted(scene.background_labels),
        "instances": [
            {
                "id": m.id,
                "label": m.label,
                "is_background": m.is_background,
                "point_count": m.point_count,
            }
            for m in scene.instances
        ],
        "checksums": {
            POINTS_NAME: hashlib.sha256(points_bytes).hexdigest(),
            TRAJECTORY_NAME: hashlib.sha256(traj_bytes).hexdigest(),
        },
    }
    (out / POINTS_NAME).write_bytes(points_bytes)
    (out / TRAJECTORY_NAME).write_bytes(traj_bytes)
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_bundle(path: str | Path) -> SceneBundle:
    """Read and fully validate a bundle directory."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"missing bundle manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed bundle manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"{manifest_path}: not a {BUNDLE_FORMAT} manifest")
    if manifest.get("version") != BUNDLE_VERSION:
        raise VersionError(
            f"{manifest_path}: unsupported bundle version {manifest.get('version')!r}"
        )
    for field in ("scene_id", "up_axis", "point_count", "pose_count", "instances", "checksums"):
        if field not in manifest:
            raise FormatError(f"{manifest_path}: missing field {field!r}")

    points_path = root / POINTS_NAME
    traj_path = root / TRAJECTORY_NAME
    for p in (points_path, traj_path):
        if not p.is_file():
            raise FormatError(f"missing bundle file: {p}")
    points_bytes = points_path.read_bytes()
    traj_bytes = traj_path.read_bytes()
    for name, blob in ((POINTS_NAME, points_bytes), (TRAJECTORY_NAME, traj_bytes)):
        stored = manifest["checksums"].get(name)
        actual = hashlib.sha256(blob).hexdigest()
        if stored != actual:
            raise ChecksumError(f"{root / name}: checksum mismatch (manifest {stored}, file {actual})")

    n = int(manifest["point_count"])
    if len(points_bytes) != n * POINT_DTYPE.itemsize:
        raise FormatError(
            f"{points_path}: length {len(points_bytes)} does not match "
            f"point_count {n} x {POINT_DTYPE.itemsize} bytes"
        )
    rec = np.frombuffer(points_bytes, dtype=POINT_DTYPE)
    m = int(manifest["pose_count"])
    if len(traj_bytes) != m * 16 * 8:
        raise FormatError(
            f"{traj_path}: length {len(traj_bytes)} does not match pose_count {m} x 128 bytes"
        )
    mats = np.frombuffer(traj_bytes, dtype="<f8").reshape(m, 4, 4)
    try:
        trajectory = tuple(CameraPose(mat) for mat in mats)
    except ValidationError as exc:
        raise FormatError(f"{traj_path}: invalid pose: {exc}") from exc

    try:
        up_axis = Axis[str(manifest["up_axis"]).upper()]
    except KeyError:
        raise FormatError(f"{manifest_path}: bad up_axis {manifest['up_axis']!r}") from None

    labels = {}
    background = []
    for entry in manifest["instances"]:
        labels[int(entry["id"])] = str(entry["label"])
        if entry.get("is_background"):
            background.append(str(entry["label"]))
    scene = SceneBundle.build(
        scene_id=str(manifest["scene_id"]),
        positions=rec["pos"].copy(),
        colors=rec["rgb"].copy(),
        point_instance=rec["inst"].copy(),
        labels=labels,
        up_axis=up_axis,
        trajectory=trajectory,
        background_labels=frozenset(manifest.get("background_labels", sorted(DEFAULT_BACKGROUND_LABELS))),
    )
    for entry, meta in zip(manifest["instances"], scene.instances):
        if int(entry["point_count"]) != meta.point_count:
            raise FormatError(
                f"{manifest_path}: instance {meta.id} point_count {entry['point_count']} "
                f"does not match points.bin ({meta.point_count})"
            )
        if bool(entry["is_background"]) != meta.is_background:
            raise FormatError(
                f"{manifest_path}: instance {meta.id} is_background flag disagrees with label set"
            )
    return scene
