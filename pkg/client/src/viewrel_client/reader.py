"""Read generated datasets and scene bundles directly from their files.

This package shares no code with the generator. Every format is parsed from
bytes here, and the predicate math in checks.py is a second implementation of
the same formulas, so agreement between the two sides actually means
something: the files say what they claim and both codings of the math concur.

A dataset directory holds samples/<scene_id>.jsonl shards plus manifest.json;
a scene bundle directory holds manifest.json, points.bin (19-byte records:
3x float32 position, 3x uint8 color, int32 instance id) and trajectory.bin
(16 float64 per pose, row-major camera-to-world). All integers and floats are
little-endian.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError

DATASET_FORMAT = "viewrel-dataset"
DATASET_VERSION = 1
BUNDLE_FORMAT = "viewrel-bundle"
BUNDLE_VERSION = 1

POINT_RECORD = np.dtype([("pos", "<f4", (3,)), ("rgb", "u1", (3,)), ("inst", "<i4")])
UNASSIGNED = -1

RELATION_NAMES = ("left", "right", "front", "behind", "above", "under")
_RELATION_INDEX = {name: i for i, name in enumerate(RELATION_NAMES)}
_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}

_SAMPLE_FIELDS = (
    "sample_id", "scene_id", "viewpoint_id", "pose",
    "anchor_id", "anchor_label", "relation_set", "target_ids", "prompt",
)

_SCENE_CACHE_SIZE = 4


def sample_identity(scene_id: str, viewpoint_id: int, anchor_id: int, relations) -> str:
    """Content hash a sample_id must equal: first 16 hex chars of sha256."""
    key = ", ".join(relations)
    text = f"{scene_id}|{viewpoint_id}|{anchor_id}|{key}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class InstanceInfo:
    id: int
    label: str
    is_background: bool
    point_count: int


@dataclass
class LoadedScene:
    """One scene bundle pulled into memory, plus a mask cache."""

    scene_id: str
    positions: np.ndarray       # (N, 3) float32
    colors: np.ndarray          # (N, 3) uint8
    point_instance: np.ndarray  # (N,) int32
    instances: dict[int, InstanceInfo]
    up_axis: int                # world column index of the gravity axis
    trajectory: np.ndarray      # (M, 4, 4) float64 camera-to-world
    fingerprint: str            # sha256 over points.bin + trajectory.bin bytes
    _masks: dict = field(default_factory=dict, repr=False)

    @property
    def point_count(self) -> int:
        return int(self.positions.shape[0])

    def mask(self, instance_id: int) -> np.ndarray:
        """Point indices owned by one instance, derived from point_instance."""
        if instance_id not in self.instances:
            raise IntegrityError(
                f"scene {self.scene_id} has no instance {instance_id}"
            )
        cached = self._masks.get(instance_id)
        if cached is None:
            cached = np.flatnonzero(self.point_instance == instance_id)
            self._masks[instance_id] = cached
        return cached


def load_scene(bundle_dir) -> LoadedScene:
    """Parse one bundle directory, verifying its own checksums and counts."""
    root = Path(bundle_dir)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"missing scene bundle manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT:
        raise FormatError(f"{manifest_path}: not a {BUNDLE_FORMAT} manifest")
    if manifest.get("version") != BUNDLE_VERSION:
        raise FormatError(
            f"{manifest_path}: unsupported bundle version {manifest.get('version')!r}"
        )
    for name in ("scene_id", "up_axis", "point_count", "pose_count", "instances", "checksums"):
        if name not in manifest:
            raise FormatError(f"{manifest_path}: missing field {name!r}")

    points_path = root / "points.bin"
    traj_path = root / "trajectory.bin"
    for p in (points_path, traj_path):
        if not p.is_file():
            raise FormatError(f"missing scene bundle file: {p}")
    points_bytes = points_path.read_bytes()
    traj_bytes = traj_path.read_bytes()
    for name, blob in (("points.bin", points_bytes), ("trajectory.bin", traj_bytes)):
        stored = manifest["checksums"].get(name)
        actual = hashlib.sha256(blob).hexdigest()
        if stored != actual:
            raise IntegrityError(
                f"{root / name}: checksum mismatch (manifest {stored}, file {actual})"
            )

    n = int(manifest["point_count"])
    if len(points_bytes) != n * POINT_RECORD.itemsize:
        raise FormatError(
            f"{points_path}: {len(points_bytes)} bytes is not {n} point records"
        )
    records = np.frombuffer(points_bytes, dtype=POINT_RECORD)
    m = int(manifest["pose_count"])
    if len(traj_bytes) != m * 128:
        raise FormatError(f"{traj_path}: {len(traj_bytes)} bytes is not {m} poses")
    trajectory = np.frombuffer(traj_bytes, dtype="<f8").reshape(m, 4, 4)

    axis = _AXIS_INDEX.get(str(manifest["up_axis"]).lower())
    if axis is None:
        raise FormatError(f"{manifest_path}: bad up_axis {manifest['up_axis']!r}")

    instances: dict[int, InstanceInfo] = {}
    for entry in manifest["instances"]:
        info = InstanceInfo(
            id=int(entry["id"]),
            label=str(entry["label"]),
            is_background=bool(entry.get("is_background")),
            point_count=int(entry["point_count"]),
        )
        if info.id in instances:
            raise FormatError(f"{manifest_path}: duplicate instance id {info.id}")
        instances[info.id] = info

    point_instance = records["inst"]
    ids, counts = np.unique(point_instance, return_counts=True)
    owned = {int(i): int(c) for i, c in zip(ids, counts) if i != UNASSIGNED}
    for info in instances.values():
        if owned.get(info.id, 0) != info.point_count:
            raise IntegrityError(
                f"{root}: instance {info.id} owns {owned.get(info.id, 0)} points, "
                f"manifest says {info.point_count}"
            )
    stray = set(owned) - set(instances)
    if stray:
        raise IntegrityError(
            f"{root}: points assigned to undeclared instances {sorted(stray)}"
        )

    hasher = hashlib.sha256(points_bytes)
    hasher.update(traj_bytes)
    return LoadedScene(
        scene_id=str(manifest["scene_id"]),
        positions=records["pos"],
        colors=records["rgb"],
        point_instance=point_instance,
        instances=instances,
        up_axis=axis,
        trajectory=trajectory,
        fingerprint=hasher.hexdigest(),
    )


@dataclass
class LoadedSample:
    """One referring-expression sample with lazily materialized masks."""

    sample_id: str
    scene_id: str
    viewpoint_id: int
    pose: np.ndarray            # (4, 4) float64 camera-to-world
    anchor_id: int
    anchor_label: str
    relations: tuple[str, ...]  # canonical order subset of RELATION_NAMES
    target_ids: tuple[int, ...]
    prompt: str
    scene: LoadedScene = field(repr=False)

    @property
    def relation_key(self) -> str:
        return ", ".join(self.relations)

    @cached_property
    def anchor_mask(self) -> np.ndarray:
        return self.scene.mask(self.anchor_id)

    @cached_property
    def target_masks(self) -> dict[int, np.ndarray]:
        return {t: self.scene.mask(t) for t in self.target_ids}

    @cached_property
    def union_mask(self) -> np.ndarray:
        return np.unique(np.concatenate(list(self.target_masks.values())))


def _parse_relations(key: str) -> tuple[str, ...]:
    parts = tuple(key.split(", "))
    for name in parts:
        if name not in _RELATION_INDEX:
            raise FormatError(f"unknown relation name {name!r}")
    order = [_RELATION_INDEX[name] for name in parts]
    if sorted(set(order)) != order:
        raise FormatError(f"relation set {key!r} is not in canonical order")
    return parts


def parse_sample(line: str) -> dict:
    """Decode one shard line into plain fields, without scene context."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed sample line: {exc}") from exc
    for name in _SAMPLE_FIELDS:
        if name not in obj:
            raise FormatError(f"sample line missing field {name!r}")
    pose_values = obj["pose"]
    if not isinstance(pose_values, list) or len(pose_values) != 16:
        raise FormatError("pose must be a flat list of 16 numbers")
    pose = np.asarray(pose_values, dtype=np.float64).reshape(4, 4)
    if not np.all(np.isfinite(pose)):
        raise FormatError("pose contains non-finite values")
    if list(pose[3]) != [0.0, 0.0, 0.0, 1.0]:
        raise FormatError("pose bottom row must be [0, 0, 0, 1]")
    return {
        "sample_id": str(obj["sample_id"]),
        "scene_id": str(obj["scene_id"]),
        "viewpoint_id": int(obj["viewpoint_id"]),
        "pose": pose,
        "anchor_id": int(obj["anchor_id"]),
        "anchor_label": str(obj["anchor_label"]),
        "relations": _parse_relations(str(obj["relation_set"])),
        "target_ids": tuple(int(t) for t in obj["target_ids"]),
        "prompt": str(obj["prompt"]),
    }


@dataclass(frozen=True)
class SceneListing:
    scene_id: str
    checksum: str
    sample_count: int


class DatasetHandle:
    """Streaming view over one generated dataset.

    Opening verifies the manifest, the per-shard sample counts, and the
    determinism token over every shard line, and checks that a bundle
    directory exists for each listed scene. Iteration then parses lazily,
    loading scene bundles on first use and keeping a few cached. Each call to
    iter() starts an independent pass, so multiple handles (or repeated
    passes over one handle) are safe.
    """

    def __init__(self, dataset_dir, scenes_dir):
        self.dataset_dir = Path(dataset_dir)
        self.scenes_dir = Path(scenes_dir)
        self.manifest = self._load_manifest()
        self.tau = float(self.manifest["config"]["relation"]["tau"])
        self.up_axis = _AXIS_INDEX[str(self.manifest["config"]["relation"]["up_axis"]).lower()]
        self.listings = tuple(
            SceneListing(str(e["scene_id"]), str(e["checksum"]), int(e["sample_count"]))
            for e in self.manifest["scenes"]
        )
        self.total_samples = int(self.manifest["total_samples"])
        self._scenes: dict[str, LoadedScene] = {}
        self.known_ids = self._verify_token()
        self._verify_scene_dirs()

    def _load_manifest(self) -> dict:
        path = self.dataset_dir / "manifest.json"
        if not path.is_file():
            raise FormatError(f"missing dataset manifest: {path}")
        try:
            manifest = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not valid JSON: {exc}") from exc
        if manifest.get("format") != DATASET_FORMAT:
            raise FormatError(f"{path}: not a {DATASET_FORMAT} manifest")
        if manifest.get("version") != DATASET_VERSION:
            raise FormatError(
                f"{path}: unsupported dataset version {manifest.get('version')!r}"
            )
        for name in ("config", "scenes", "total_samples", "stats", "determinism_token"):
            if name not in manifest:
                raise FormatError(f"{path}: missing field {name!r}")
        stats_total = sum(int(v) for v in manifest["stats"].values())
        if stats_total != int(manifest["total_samples"]):
            raise IntegrityError(
                f"{path}: stats sum to {stats_total}, total_samples says "
                f"{manifest['total_samples']}"
            )
        return manifest

    def _shard_path(self, scene_id: str) -> Path:
        return self.dataset_dir / "samples" / f"{scene_id}.jsonl"

    def _verify_token(self) -> frozenset:
        hasher = hashlib.sha256()
        ids = []
        total = 0
        for listing in self.listings:
            shard = self._shard_path(listing.scene_id)
            if not shard.is_file():
                raise FormatError(f"missing dataset shard: {shard}")
            count = 0
            with open(shard, encoding="utf-8") as fh:
                for line in fh:
                    hasher.update(line.encode("utf-8"))
                    ids.append(parse_sample(line)["sample_id"])
                    count += 1
            if count != listing.sample_count:
                raise IntegrityError(
                    f"{shard}: {count} samples, manifest says {listing.sample_count}"
                )
            total += count
        if total != self.total_samples:
            raise IntegrityError(
                f"{self.dataset_dir}: {total} samples, manifest says {self.total_samples}"
            )
        token = hasher.hexdigest()
        if token != self.manifest["determinism_token"]:
            raise IntegrityError(
                f"{self.dataset_dir}: determinism token mismatch "
                f"(manifest {self.manifest['determinism_token']}, recomputed {token})"
            )
        if len(set(ids)) != len(ids):
            raise IntegrityError(f"{self.dataset_dir}: duplicate sample ids")
        return frozenset(ids)

    def _verify_scene_dirs(self) -> None:
        for listing in self.listings:
            bundle = self.scenes_dir / listing.scene_id
            if not (bundle / "manifest.json").is_file():
                raise FormatError(
                    f"missing scene bundle for {listing.scene_id}: {bundle}"
                )

    def __len__(self) -> int:
        return self.total_samples

    def scene(self, scene_id: str) -> LoadedScene:
        """Bundle for one scene, cached, cross-checked against the manifest."""
        cached = self._scenes.get(scene_id)
        if cached is not None:
            return cached
        listing = next((l for l in self.listings if l.scene_id == scene_id), None)
        if listing is None:
            raise FormatError(f"dataset lists no scene {scene_id}")
        scene = load_scene(self.scenes_dir / scene_id)
        if scene.scene_id != scene_id:
            raise IntegrityError(
                f"bundle in {self.scenes_dir / scene_id} calls itself {scene.scene_id}"
            )
        if scene.fingerprint != listing.checksum:
            raise IntegrityError(
                f"scene {scene_id}: bundle bytes hash to {scene.fingerprint}, "
                f"dataset manifest recorded {listing.checksum}"
            )
        if len(self._scenes) >= _SCENE_CACHE_SIZE:
            self._scenes.pop(next(iter(self._scenes)))
        self._scenes[scene_id] = scene
        return scene

    def __iter__(self):
        for listing in self.listings:
            scene = self.scene(listing.scene_id)
            with open(self._shard_path(listing.scene_id), encoding="utf-8") as fh:
                for line in fh:
                    fields = parse_sample(line)
                    if fields["scene_id"] != listing.scene_id:
                        raise IntegrityError(
                            f"sample {fields['sample_id']} claims scene "
                            f"{fields['scene_id']} inside shard {listing.scene_id}"
                        )
                    yield LoadedSample(scene=scene, **fields)


def open_dataset(dataset_dir, scenes_dir) -> DatasetHandle:
    """Open a generated dataset next to the bundles it was generated from."""
    return DatasetHandle(dataset_dir, scenes_dir)
