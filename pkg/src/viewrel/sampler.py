"""Viewpoint selection, per-viewpoint annotation, and sample construction.

A sample is a (scene, viewpoint, anchor, relation set) quadruple whose target
set is every visible instance satisfying all relations in the set against the
anchor. Semantics are inclusive: an instance left of and in front of the
anchor appears in the {left}, {front}, and {left, front} samples alike.
"""

from __future__ import annotations

import hashlib
import logging
import multiprocessing
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ValidationError
from .geometry import CameraPose, aabb_from_points, world_to_camera
from .relations import (
    InstanceFrameBoxes,
    RelationConfig,
    RelationLabel,
    RelationSet,
    holds,
    valid_relation_sets,
)
from .scene import SceneBundle
from .visibility import Intrinsics, VisibilityConfig, visible_instances

log = logging.getLogger(__name__)

UNIFORM_STRIDE = "uniform-stride"
RANDOM = "random"


@dataclass(frozen=True, slots=True)
class GenConfig:
    """Everything that determines a generated dataset apart from the scenes."""

    viewpoints_per_scene: int = 10
    viewpoint_strategy: str = UNIFORM_STRIDE
    seed: int = 0
    relation: RelationConfig = RelationConfig()
    visibility: VisibilityConfig = VisibilityConfig()
    intrinsics: Intrinsics = Intrinsics()
    min_instance_points: int = 0

    def __post_init__(self):
        if self.viewpoints_per_scene < 1:
            raise ValidationError(
                f"viewpoints_per_scene must be at least 1, got {self.viewpoints_per_scene}"
            )
        if self.viewpoint_strategy not in (UNIFORM_STRIDE, RANDOM):
            raise ValidationError(f"unknown viewpoint_strategy {self.viewpoint_strategy!r}")
        if self.min_instance_points < 0:
            raise ValidationError("min_instance_points must be non-negative")

    def as_dict(self) -> dict:
        return {
            "viewpoints_per_scene": self.viewpoints_per_scene,
            "viewpoint_strategy": self.viewpoint_strategy,
            "seed": self.seed,
            "relation": self.relation.as_dict(),
            "visibility": self.visibility.as_dict(),
            "intrinsics": self.intrinsics.as_dict(),
            "min_instance_points": self.min_instance_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        return cls(
            viewpoints_per_scene=d["viewpoints_per_scene"],
            viewpoint_strategy=d["viewpoint_strategy"],
            seed=d["seed"],
            relation=RelationConfig.from_dict(d["relation"]),
            visibility=VisibilityConfig.from_dict(d["visibility"]),
            intrinsics=Intrinsics.from_dict(d["intrinsics"]),
            min_instance_points=d["min_instance_points"],
        )


def sample_identifier(
    scene_id: str, viewpoint_id: int, anchor_id: int, relation_set: RelationSet
) -> str:
    """Stable content-derived id; survives regeneration and sharding."""
    text = f"{scene_id}|{viewpoint_id}|{anchor_id}|{relation_set.key}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True, slots=True)
class Sample:
    sample_id: str
    scene_id: str
    viewpoint_id: int
    pose: CameraPose
    anchor_id: int
    anchor_label: str
    relation_set: RelationSet
    target_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.target_ids:
            raise ValidationError("sample must have at least one target")
        ordered = tuple(sorted(set(self.target_ids)))
        if ordered != self.target_ids:
            raise ValidationError("target_ids must be sorted and unique")
        if self.anchor_id in self.target_ids:
            raise ValidationError(f"anchor {self.anchor_id} cannot be its own target")
        expected = sample_identifier(
            self.scene_id, self.viewpoint_id, self.anchor_id, self.relation_set
        )
        if self.sample_id != expected:
            raise ValidationError(
                f"sample_id {self.sample_id} does not match content hash {expected}"
            )

    @classmethod
    def create(
        cls,
        scene_id: str,
        viewpoint_id: int,
        pose: CameraPose,
        anchor_id: int,
        anchor_label: str,
        relation_set: RelationSet,
        target_ids,
    ) -> "Sample":
        return cls(
            sample_id=sample_identifier(scene_id, viewpoint_id, anchor_id, relation_set),
            scene_id=scene_id,
            viewpoint_id=viewpoint_id,
            pose=pose,
            anchor_id=anchor_id,
            anchor_label=anchor_label,
            relation_set=relation_set,
            target_ids=tuple(sorted(set(target_ids))),
        )


class StatsTable:
    """Sample counts per relation-set category, in the canonical 26-row order."""

    def __init__(self):
        self.counts: dict[str, int] = {s.key: 0 for s in valid_relation_sets()}
        self.total: int = 0

    def add(self, relation_set: RelationSet, n: int = 1) -> None:
        if relation_set.key not in self.counts:
            raise ValidationError(f"unknown relation category {relation_set.key!r}")
        self.counts[relation_set.key] += n
        self.total += n

    def merge(self, other: "StatsTable") -> None:
        for key, n in other.counts.items():
            self.counts[key] += n
        self.total += other.total

    def rows(self) -> list[tuple[str, int]]:
        return list(self.counts.items())

    def as_dict(self) -> dict:
        return dict(self.counts)

    @classmethod
    def from_dict(cls, d: dict) -> "StatsTable":
        table = cls()
        for key, n in d.items():
            if key not in table.counts:
                raise ValidationError(f"unknown relation category {key!r}")
            table.counts[key] = int(n)
        table.total = sum(table.counts.values())
        return table

    def __eq__(self, other):
        return isinstance(other, StatsTable) and self.counts == other.counts

    def __repr__(self):
        return f"StatsTable(total={self.total})"


def select_viewpoints(trajectory, k: int, strategy: str = UNIFORM_STRIDE, seed: int = 0):
    """Pick k viewpoints from a pose trajectory.

    uniform-stride spreads indices evenly from the first frame to the last:
    round(m*(len-1)/(k-1)) for m in 0..k-1, duplicates removed. random draws
    k distinct indices from the seeded generator and sorts them. Both return
    [(viewpoint_id, pose)] and both degrade to the full trajectory when
    k >= len(trajectory).
    """
    n = len(trajectory)
    if n == 0:
        raise ValidationError("cannot select viewpoints from an empty trajectory")
    if k < 1:
        raise ValidationError(f"viewpoint count must be at least 1, got {k}")
    if k >= n:
        indices = list(range(n))
    elif strategy == UNIFORM_STRIDE:
        if k == 1:
            indices = [0]
        else:
            raw = (round(m * (n - 1) / (k - 1)) for m in range(k))
            indices = list(dict.fromkeys(raw))
    elif strategy == RANDOM:
        rng = np.random.default_rng(seed & 0xFFFFFFFFFFFFFFFF)
        indices = sorted(int(i) for i in rng.choice(n, size=k, replace=False))
    else:
        raise ValidationError(f"unknown viewpoint_strategy {strategy!r}")
    return [(i, trajectory[i]) for i in indices]


def _scene_seed(base_seed: int, scene_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}|{scene_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _frame_boxes_cached(inst_id, world_pts, cam_pts) -> InstanceFrameBoxes:
    # same construction as relations.frame_boxes, reusing an already
    # transformed camera-frame block instead of re-projecting per instance
    return InstanceFrameBoxes(
        instance_id=inst_id,
        cam_box=aabb_from_points(cam_pts),
        world_box=aabb_from_points(world_pts),
    )


def eligible_visible(scene: SceneBundle, pose: CameraPose, cfg: GenConfig) -> list[int]:
    visible = visible_instances(scene, pose, cfg.intrinsics, cfg.visibility)
    return sorted(
        v for v in visible if scene.instance(v).point_count >= cfg.min_instance_points
    )


def _pair_relations(scene, pose, cfg, ids):
    """Relation labels for every ordered (target, anchor) pair of visible ids."""
    cam_all = world_to_camera(pose, scene.positions)
    boxes = {}
    for v in ids:
        idx = scene.instance(v).point_indices
        boxes[v] = _frame_boxes_cached(v, scene.positions[idx], cam_all[idx])
    rels: dict[tuple[int, int], tuple[RelationLabel, ...]] = {}
    for t in ids:
        for a in ids:
            if t == a:
                continue
            labels = tuple(
                r for r in RelationLabel if holds(r, boxes[t], boxes[a], cfg.relation)
            )
            if labels:
                rels[(t, a)] = labels
    return rels


def _subsets(labels):
    for size in range(1, len(labels) + 1):
        yield from combinations(labels, size)


def annotate_viewpoint(
    scene: SceneBundle, viewpoint_id: int, pose: CameraPose, cfg: GenConfig
) -> list[Sample]:
    """All samples for one viewpoint, sorted by (anchor, relation-set order)."""
    samples, _ = annotate_viewpoint_with_pairs(scene, viewpoint_id, pose, cfg)
    return samples


def annotate_viewpoint_with_pairs(
    scene: SceneBundle, viewpoint_id: int, pose: CameraPose, cfg: GenConfig
):
    """Like annotate_viewpoint, also returning ordered-pair counts per label.

    The pair counts drive the balance diagnostic: antisymmetry makes
    #left == #right (and the other two pairs) exact at every viewpoint.
    """
    ids = eligible_visible(scene, pose, cfg)
    pair_counts = {r.key: 0 for r in RelationLabel}
    if len(ids) < 2:
        return [], pair_counts
    rels = _pair_relations(scene, pose, cfg, ids)
    for labels in rels.values():
        for r in labels:
            pair_counts[r.key] += 1

    buckets: dict[tuple[int, RelationSet], list[int]] = {}
    for (t, a), labels in rels.items():
        for subset in _subsets(labels):
            # any subset of a satisfiable label set is itself a valid set:
            # complementary labels can never hold simultaneously
            key = (a, RelationSet.of(*subset))
            buckets.setdefault(key, []).append(t)

    samples = []
    for (anchor, relation_set), targets in buckets.items():
        samples.append(
            Sample.create(
                scene_id=scene.scene_id,
                viewpoint_id=viewpoint_id,
                pose=pose,
                anchor_id=anchor,
                anchor_label=scene.instance(anchor).label,
                relation_set=relation_set,
                target_ids=targets,
            )
        )
    samples.sort(key=lambda s: (s.anchor_id, s.relation_set.sort_index()))
    return samples, pair_counts


# Worker-pool plumbing. Scenes are installed in a module global before fork so
# children inherit them without pickling; each task ships back only samples.
_POOL_STATE: dict = {}


def _init_pool(scenes, cfg):
    _POOL_STATE["scenes"] = scenes
    _POOL_STATE["cfg"] = cfg


def _run_unit(unit):
    scene_idx, viewpoint_id, pose_idx = unit
    scene = _POOL_STATE["scenes"][scene_idx]
    cfg = _POOL_STATE["cfg"]
    pose = scene.trajectory[pose_idx]
    samples, pair_counts = annotate_viewpoint_with_pairs(scene, viewpoint_id, pose, cfg)
    return samples, pair_counts


def generate_dataset(
    scenes,
    cfg: GenConfig,
    sink,
    workers: int = 1,
    pair_log: list | None = None,
) -> StatsTable:
    """Annotate every scene at its selected viewpoints and stream to `sink`.

    `sink` needs a single method add(sample); samples arrive in deterministic
    global order (scene_id, viewpoint_id, anchor_id, relation-set order)
    regardless of `workers`. Scenes failing validation are skipped, logged,
    and reported through sink.skip_scene when the sink has it.
    """
    ordered = sorted(scenes, key=lambda s: s.scene_id)
    ids = [s.scene_id for s in ordered]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate scene_ids in generation input")

    usable = []
    for scene in ordered:
        try:
            scene.validate()
        except ValidationError as exc:
            log.warning("skipping scene %s: %s", scene.scene_id, exc)
            if hasattr(sink, "skip_scene"):
                sink.skip_scene(scene.scene_id, str(exc))
            continue
        usable.append(scene)

    units = []
    for scene_idx, scene in enumerate(usable):
        chosen = select_viewpoints(
            scene.trajectory,
            cfg.viewpoints_per_scene,
            cfg.viewpoint_strategy,
            seed=_scene_seed(cfg.seed, scene.scene_id),
        )
        for viewpoint_id, _pose in chosen:
            units.append((scene_idx, viewpoint_id, viewpoint_id))

    if workers > 1 and len(units) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(workers, initializer=_init_pool, initargs=(usable, cfg)) as pool:
            results = pool.map(_run_unit, units, chunksize=max(1, len(units) // (workers * 4)))
    else:
        _init_pool(usable, cfg)
        results = [_run_unit(u) for u in units]

    stats = StatsTable()
    for (scene_idx, viewpoint_id, _), (samples, pair_counts) in zip(units, results):
        if pair_log is not None:
            entry = {"scene_id": usable[scene_idx].scene_id, "viewpoint_id": viewpoint_id}
            entry.update(pair_counts)
            pair_log.append(entry)
        for sample in samples:
            sink.add(sample)
            stats.add(sample.relation_set)
    return stats


def compute_stats(samples) -> StatsTable:
    """Count an iterable of samples (or sample relation sets) per category."""
    stats = StatsTable()
    for item in samples:
        relation_set = item.relation_set if isinstance(item, Sample) else item
        stats.add(relation_set)
    return stats
