"""Dataset serialization, prompt rendering, and the prediction-file format.

Datasets are directories: one line-delimited JSON shard per scene under
samples/, then manifest.json written last. Every line is independently
parseable, and a sha256 over all sample lines (the determinism token) lets
readers detect truncation or reordering. Poses are serialized row-major with
17 significant digits, which round-trips doubles exactly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ChecksumError, FormatError, ValidationError, VersionError
from .geometry import CameraPose
from .relations import RelationSet
from .sampler import Sample, StatsTable

DATASET_FORMAT = "viewrel-dataset"
DATASET_VERSION = 1
MANIFEST_NAME = "manifest.json"
SHARD_DIR = "samples"

PROMPT_TEMPLATE = (
    "the object that is {phrase} the highlighted {anchor} at <loc>, "
    "relative to the camera pose <viewpoint>."
)


def prompt_text(relation_set: RelationSet, anchor_label: str) -> str:
    """Referring expression with literal <loc> and <viewpoint> placeholders."""
    phrase = " and ".join(label.phrase for label in relation_set)
    return PROMPT_TEMPLATE.format(phrase=phrase, anchor=anchor_label)


def render_prompt(sample: Sample) -> str:
    return prompt_text(sample.relation_set, sample.anchor_label)


def _pose_tokens(pose: CameraPose) -> str:
    return ", ".join(f"{v:.17g}" for v in pose.matrix.ravel())


def sample_line(sample: Sample) -> str:
    """One JSON object per sample, fixed field order, no trailing newline."""
    fields = [
        f'"sample_id": {json.dumps(sample.sample_id)}',
        f'"scene_id": {json.dumps(sample.scene_id)}',
        f'"viewpoint_id": {sample.viewpoint_id}',
        f'"pose": [{_pose_tokens(sample.pose)}]',
        f'"anchor_id": {sample.anchor_id}',
        f'"anchor_label": {json.dumps(sample.anchor_label)}',
        f'"relation_set": {json.dumps(sample.relation_set.key)}',
        f'"target_ids": [{", ".join(str(t) for t in sample.target_ids)}]',
        f'"prompt": {json.dumps(render_prompt(sample))}',
    ]
    return "{" + ", ".join(fields) + "}"


_REQUIRED_FIELDS = (
    "sample_id", "scene_id", "viewpoint_id", "pose",
    "anchor_id", "anchor_label", "relation_set", "target_ids", "prompt",
)


def parse_sample_line(line: str) -> Sample:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed sample line: {exc}") from exc
    for name in _REQUIRED_FIELDS:
        if name not in obj:
            raise FormatError(f"sample line missing field {name!r}")
    pose_values = obj["pose"]
    if len(pose_values) != 16:
        raise FormatError(f"pose must have 16 entries, got {len(pose_values)}")
    pose = CameraPose(np.asarray(pose_values, dtype=float).reshape(4, 4))
    return Sample(
        sample_id=obj["sample_id"],
        scene_id=obj["scene_id"],
        viewpoint_id=int(obj["viewpoint_id"]),
        pose=pose,
        anchor_id=int(obj["anchor_id"]),
        anchor_label=obj["anchor_label"],
        relation_set=RelationSet.from_string(obj["relation_set"]),
        target_ids=tuple(int(t) for t in obj["target_ids"]),
    )


@dataclass(frozen=True, slots=True)
class SceneEntry:
    scene_id: str
    checksum: str
    sample_count: int


@dataclass(frozen=True, slots=True)
class DatasetManifest:
    version: int
    config: dict
    scenes: tuple[SceneEntry, ...]
    total_samples: int
    stats: StatsTable
    determinism_token: str
    skipped_scenes: tuple[dict, ...] = ()

    def as_dict(self) -> dict:
        return {
            "format": DATASET_FORMAT,
            "version": self.version,
            "config": self.config,
            "scenes": [
                {"scene_id": e.scene_id, "checksum": e.checksum, "sample_count": e.sample_count}
                for e in self.scenes
            ],
            "total_samples": self.total_samples,
            "stats": self.stats.as_dict(),
            "determinism_token": self.determinism_token,
            "skipped_scenes": list(self.skipped_scenes),
        }


class DatasetWriter:
    """Streams canonically ordered samples into per-scene shards.

    add() must see samples grouped by scene in ascending scene_id order and,
    within a scene, ascending (viewpoint_id, anchor_id, relation-set) order;
    anything else raises. finalize() writes the manifest last and returns it.
    """

    def __init__(self, out_dir, config_snapshot: dict, scene_checksums: dict[str, str]):
        self.out_dir = Path(out_dir)
        (self.out_dir / SHARD_DIR).mkdir(parents=True, exist_ok=True)
        self._config = dict(config_snapshot)
        self._checksums = dict(scene_checksums)
        self._hasher = hashlib.sha256()
        self._stats = StatsTable()
        self._entries: list[SceneEntry] = []
        self._skipped: list[dict] = []
        self._current_scene: str | None = None
        self._current_count = 0
        self._current_file = None
        self._last_key = None
        self._done_scenes: set[str] = set()
        self._finalized = False

    def skip_scene(self, scene_id: str, reason: str) -> None:
        self._skipped.append({"scene_id": scene_id, "reason": reason})

    def _close_current(self):
        if self._current_file is not None:
            self._current_file.close()
            self._entries.append(
                SceneEntry(
                    scene_id=self._current_scene,
                    checksum=self._checksums.get(self._current_scene, ""),
                    sample_count=self._current_count,
                )
            )
            self._done_scenes.add(self._current_scene)
            self._current_file = None

    def add(self, sample: Sample) -> None:
        if self._finalized:
            raise ValidationError("writer already finalized")
        if sample.scene_id not in self._checksums:
            raise ValidationError(
                f"sample for scene {sample.scene_id} which is not in the scene list"
            )
        if sample.scene_id != self._current_scene:
            if sample.scene_id in self._done_scenes:
                raise ValidationError(
                    f"samples for scene {sample.scene_id} arrived after its shard closed"
                )
            if self._current_scene is not None and sample.scene_id < self._current_scene:
                raise ValidationError(
                    f"scene {sample.scene_id} out of order after {self._current_scene}"
                )
            self._close_current()
            self._current_scene = sample.scene_id
            self._current_count = 0
            self._last_key = None
            self._current_file = open(
                self.out_dir / SHARD_DIR / f"{sample.scene_id}.jsonl",
                "w",
                encoding="utf-8",
                newline="\n",
            )
        key = (sample.viewpoint_id, sample.anchor_id, sample.relation_set.sort_index())
        if self._last_key is not None and key <= self._last_key:
            raise ValidationError(
                f"sample {sample.sample_id} out of canonical order within scene "
                f"{sample.scene_id}"
            )
        self._last_key = key
        line = sample_line(sample) + "\n"
        self._current_file.write(line)
        self._hasher.update(line.encode("utf-8"))
        self._stats.add(sample.relation_set)
        self._current_count += 1

    def finalize(self) -> DatasetManifest:
        if self._finalized:
            raise ValidationError("writer already finalized")
        self._close_current()
        self._finalized = True
        # scenes that yielded no samples still get a (possibly empty) shard
        # and a manifest entry, so readers can account for every input scene
        by_id = {e.scene_id: e for e in self._entries}
        skipped_ids = {d["scene_id"] for d in self._skipped}
        entries = []
        for scene_id in sorted(self._checksums):
            if scene_id in skipped_ids:
                continue
            if scene_id in by_id:
                entries.append(by_id[scene_id])
            else:
                (self.out_dir / SHARD_DIR / f"{scene_id}.jsonl").touch()
                entries.append(SceneEntry(scene_id, self._checksums[scene_id], 0))
        manifest = DatasetManifest(
            version=DATASET_VERSION,
            config=self._config,
            scenes=tuple(entries),
            total_samples=self._stats.total,
            stats=self._stats,
            determinism_token=self._hasher.hexdigest(),
            skipped_scenes=tuple(self._skipped),
        )
        text = json.dumps(manifest.as_dict(), indent=2) + "\n"
        (self.out_dir / MANIFEST_NAME).write_text(text, encoding="utf-8", newline="\n")
        return manifest


def _load_manifest(path: Path) -> DatasetManifest:
    if not path.is_file():
        raise FormatError(f"missing dataset manifest: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed dataset manifest {path}: {exc}") from exc
    if obj.get("format") != DATASET_FORMAT:
        raise FormatError(f"{path}: not a {DATASET_FORMAT} manifest")
    if obj.get("version") != DATASET_VERSION:
        raise VersionError(f"{path}: unsupported dataset version {obj.get('version')!r}")
    for name in ("config", "scenes", "total_samples", "stats", "determinism_token"):
        if name not in obj:
            raise FormatError(f"{path}: missing field {name!r}")
    return DatasetManifest(
        version=obj["version"],
        config=obj["config"],
        scenes=tuple(
            SceneEntry(e["scene_id"], e["checksum"], int(e["sample_count"]))
            for e in obj["scenes"]
        ),
        total_samples=int(obj["total_samples"]),
        stats=StatsTable.from_dict(obj["stats"]),
        determinism_token=obj["determinism_token"],
        skipped_scenes=tuple(obj.get("skipped_scenes", [])),
    )


def read_samples(in_dir):
    """Load a dataset directory: (manifest, list of samples).

    Re-hashes every sample line and compares against the manifest's
    determinism token, so truncation, edits, and shard reordering all fail.
    """
    root = Path(in_dir)
    manifest = _load_manifest(root / MANIFEST_NAME)
    hasher = hashlib.sha256()
    samples: list[Sample] = []
    for entry in manifest.scenes:
        shard = root / SHARD_DIR / f"{entry.scene_id}.jsonl"
        if not shard.is_file():
            raise FormatError(f"missing dataset shard: {shard}")
        count = 0
        with open(shard, encoding="utf-8") as fh:
            for line in fh:
                hasher.update(line.encode("utf-8"))
                samples.append(parse_sample_line(line))
                count += 1
        if count != entry.sample_count:
            raise FormatError(
                f"{shard}: {count} samples but manifest says {entry.sample_count}"
            )
    if len(samples) != manifest.total_samples:
        raise FormatError(
            f"{root}: {len(samples)} samples but manifest says {manifest.total_samples}"
        )
    token = hasher.hexdigest()
    if token != manifest.determinism_token:
        raise ChecksumError(
            f"{root}: determinism token mismatch (manifest {manifest.determinism_token}, "
            f"recomputed {token})"
        )
    return manifest, samples


def encode_mask(indices) -> list[int]:
    """Run-length encode sorted unique point indices as [start, length, ...]."""
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
    if idx.size and idx[0] < 0:
        raise ValidationError("mask indices must be non-negative")
    runs: list[int] = []
    if idx.size == 0:
        return runs
    starts = np.flatnonzero(np.diff(idx) > 1) + 1
    for block in np.split(idx, starts):
        runs.extend((int(block[0]), int(block.size)))
    return runs


def decode_mask(runs) -> np.ndarray:
    """Inverse of encode_mask; validates shape and monotonicity."""
    runs = list(runs)
    if len(runs) % 2 != 0:
        raise FormatError("mask run-length data must have even length")
    out = []
    prev_end = -1
    for i in range(0, len(runs), 2):
        start, length = int(runs[i]), int(runs[i + 1])
        if start < 0 or length < 1:
            raise FormatError(f"bad mask run ({start}, {length})")
        if start <= prev_end:
            raise FormatError(f"mask runs overlap or are unordered at index {start}")
        out.append(np.arange(start, start + length, dtype=np.int64))
        prev_end = start + length - 1
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass(frozen=True, slots=True)
class PredictionRecord:
    """One predicted mask: instance ids, explicit point indices, or both."""

    sample_id: str
    instance_ids: tuple[int, ...] | None = None
    point_indices: np.ndarray | None = None

    def __post_init__(self):
        if self.instance_ids is None and self.point_indices is None:
            raise ValidationError(f"prediction {self.sample_id} carries no mask")


@dataclass(slots=True)
class PredictionDiagnostics:
    duplicates: int = 0
    unknown: int = 0
    unknown_ids: list = None

    def __post_init__(self):
        if self.unknown_ids is None:
            self.unknown_ids = []


def write_predictions(records, path) -> None:
    """One JSON object per line; point masks stored run-length encoded."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj: dict = {"sample_id": rec.sample_id}
            if rec.instance_ids is not None:
                obj["instance_ids"] = list(rec.instance_ids)
            if rec.point_indices is not None:
                obj["mask_rle"] = encode_mask(rec.point_indices)
            fh.write(json.dumps(obj) + "\n")


def read_predictions(path, known_ids=None):
    """Parse a prediction file: ({sample_id: record}, diagnostics).

    Duplicate sample_ids keep the last record; ids absent from known_ids (when
    given) are dropped. Both cases are counted in the diagnostics.
    """
    out: dict[str, PredictionRecord] = {}
    diags = PredictionDiagnostics()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: malformed prediction line: {exc}") from exc
            if "sample_id" not in obj:
                raise FormatError(f"{path}:{lineno}: prediction missing sample_id")
            sid = obj["sample_id"]
            instance_ids = None
            point_indices = None
            if "instance_ids" in obj:
                instance_ids = tuple(int(i) for i in obj["instance_ids"])
            if "mask_rle" in obj:
                point_indices = decode_mask(obj["mask_rle"])
            if instance_ids is None and point_indices is None:
                raise FormatError(f"{path}:{lineno}: prediction {sid} carries no mask")
            if known_ids is not None and sid not in known_ids:
                diags.unknown += 1
                if len(diags.unknown_ids) < 10:
                    diags.unknown_ids.append(sid)
                continue
            if sid in out:
                diags.duplicates += 1
            out[sid] = PredictionRecord(
                sample_id=sid, instance_ids=instance_ids, point_indices=point_indices
            )
    return out, diags
