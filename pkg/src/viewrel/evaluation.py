"""Scoring protocol and reference solvers.

A prediction is scored by the maximum IoU over each individual target and the
union of all targets, so hitting any one intended object exactly earns 1.0.
Accuracy thresholds are strict: a score of exactly 0.25 does not count toward
Acc@0.25. Missing predictions score 0 and stay in every denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset_io import PredictionRecord
from .errors import ValidationError
from .geometry import CameraPose
from .relations import RelationSet, frame_boxes, holds, valid_relation_sets
from .sampler import GenConfig, Sample, eligible_visible
from .scene import SceneBundle


def iou(a, b) -> float:
    """Intersection over union of two point-index sets; 0 when both empty."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 and b.size == 0:
        return 0.0
    inter = np.intersect1d(a, b).size
    union = np.union1d(a, b).size
    return inter / union


@dataclass(frozen=True, slots=True)
class SampleScore:
    sample_id: str
    iou: float
    relation_set: RelationSet

    def __post_init__(self):
        if not (0.0 <= self.iou <= 1.0):
            raise ValidationError(f"iou must be in [0, 1], got {self.iou}")


def _expand_mask(pred: PredictionRecord, scene: SceneBundle) -> np.ndarray:
    parts = []
    if pred.instance_ids is not None:
        for inst_id in pred.instance_ids:
            parts.append(scene.instance(inst_id).point_indices)
    if pred.point_indices is not None:
        idx = np.asarray(pred.point_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= scene.point_count):
            raise ValidationError(
                f"prediction {pred.sample_id} has point indices outside scene "
                f"{scene.scene_id} (0..{scene.point_count - 1})"
            )
        parts.append(idx)
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.unique(np.concatenate(parts))


def _target_union(sample: Sample, scene: SceneBundle) -> np.ndarray:
    return np.unique(
        np.concatenate([scene.instance(t).point_indices for t in sample.target_ids])
    )


def sample_score(pred: PredictionRecord, sample: Sample, scene: SceneBundle) -> SampleScore:
    """Max IoU over individual targets and their union."""
    if pred.sample_id != sample.sample_id:
        raise ValidationError(
            f"prediction {pred.sample_id} scored against sample {sample.sample_id}"
        )
    if sample.scene_id != scene.scene_id:
        raise ValidationError(
            f"sample {sample.sample_id} belongs to scene {sample.scene_id}, "
            f"not {scene.scene_id}"
        )
    mask = _expand_mask(pred, scene)
    best = iou(mask, _target_union(sample, scene))
    for t in sample.target_ids:
        best = max(best, iou(mask, scene.instance(t).point_indices))
    return SampleScore(sample_id=sample.sample_id, iou=best, relation_set=sample.relation_set)


@dataclass(frozen=True, slots=True)
class CategoryReport:
    count: int
    miou: float
    acc_25: float
    acc_50: float


@dataclass(frozen=True, slots=True)
class EvalReport:
    miou: float
    acc_25: float
    acc_50: float
    matched: int
    missing: int
    per_category: dict

    def as_dict(self) -> dict:
        return {
            "miou": self.miou,
            "acc_25": self.acc_25,
            "acc_50": self.acc_50,
            "matched": self.matched,
            "missing": self.missing,
            "per_category": {
                key: {
                    "count": c.count,
                    "miou": c.miou,
                    "acc_25": c.acc_25,
                    "acc_50": c.acc_50,
                }
                for key, c in self.per_category.items()
            },
        }

    def format_table(self) -> str:
        lines = [
            f"{'category':<28} {'count':>7} {'mIoU':>8} {'Acc@25':>8} {'Acc@50':>8}",
            "-" * 62,
        ]
        for key, c in self.per_category.items():
            lines.append(
                f"{key:<28} {c.count:>7} {c.miou:>8.4f} {c.acc_25:>8.4f} {c.acc_50:>8.4f}"
            )
        lines.append("-" * 62)
        lines.append(
            f"{'overall':<28} {self.matched + self.missing:>7} "
            f"{self.miou:>8.4f} {self.acc_25:>8.4f} {self.acc_50:>8.4f}"
        )
        lines.append(f"matched {self.matched}, missing {self.missing}")
        return "\n".join(lines)


def aggregate(scores, expected: dict) -> EvalReport:
    """Reduce per-sample scores against the full expected-sample map.

    `expected` maps sample_id to its RelationSet. Samples without a score are
    treated as 0.0 and counted as missing. Duplicate score entries and scores
    for unknown ids are errors.
    """
    by_id: dict[str, SampleScore] = {}
    for s in scores:
        if s.sample_id in by_id:
            raise ValidationError(f"duplicate score for sample {s.sample_id}")
        if s.sample_id not in expected:
            raise ValidationError(f"score for unknown sample {s.sample_id}")
        by_id[s.sample_id] = s

    values = []
    per_cat_values: dict[str, list[float]] = {}
    matched = 0
    for sample_id, relation_set in expected.items():
        score = by_id.get(sample_id)
        v = score.iou if score is not None else 0.0
        if score is not None:
            matched += 1
        values.append(v)
        per_cat_values.setdefault(relation_set.key, []).append(v)

    def summarize(vals) -> tuple[float, float, float]:
        if not vals:
            return 0.0, 0.0, 0.0
        arr = np.asarray(vals)
        return (
            float(arr.mean()),
            float(np.mean(arr > 0.25)),
            float(np.mean(arr > 0.50)),
        )

    miou, acc25, acc50 = summarize(values)
    per_category = {}
    for relation_set in valid_relation_sets():
        vals = per_cat_values.get(relation_set.key)
        if not vals:
            continue
        c_miou, c_25, c_50 = summarize(vals)
        per_category[relation_set.key] = CategoryReport(
            count=len(vals), miou=c_miou, acc_25=c_25, acc_50=c_50
        )
    return EvalReport(
        miou=miou,
        acc_25=acc25,
        acc_50=acc50,
        matched=matched,
        missing=len(expected) - matched,
        per_category=per_category,
    )


def _recompute_targets(sample: Sample, scene: SceneBundle, cfg: GenConfig, pose: CameraPose):
    """Target ids for the sample's anchor and relation set at an arbitrary pose."""
    ids = eligible_visible(scene, pose, cfg)
    if sample.anchor_id not in ids:
        return ()
    boxes = {
        v: frame_boxes(v, scene.positions[scene.instance(v).point_indices], pose)
        for v in ids
    }
    anchor_box = boxes[sample.anchor_id]
    targets = []
    for t in ids:
        if t == sample.anchor_id:
            continue
        if all(holds(r, boxes[t], anchor_box, cfg.relation) for r in sample.relation_set):
            targets.append(t)
    return tuple(targets)


def oracle_solver(sample: Sample, scene: SceneBundle, cfg: GenConfig) -> PredictionRecord:
    """Recompute ground truth from geometry at the sample's own pose."""
    targets = _recompute_targets(sample, scene, cfg, sample.pose)
    return PredictionRecord(sample_id=sample.sample_id, instance_ids=targets)


def blind_solver(
    sample: Sample,
    scene: SceneBundle,
    cfg: GenConfig,
    canonical_pose: CameraPose | None = None,
) -> PredictionRecord:
    """Oracle with the pose swapped for a canonical one: viewpoint-unaware."""
    if canonical_pose is None:
        if not scene.trajectory:
            raise ValidationError(
                f"scene {scene.scene_id} has no trajectory to take a canonical pose from"
            )
        canonical_pose = scene.trajectory[0]
    targets = _recompute_targets(sample, scene, cfg, canonical_pose)
    return PredictionRecord(sample_id=sample.sample_id, instance_ids=targets)


def random_solver(
    sample: Sample,
    scene: SceneBundle,
    seed: int,
    cfg: GenConfig | None = None,
) -> PredictionRecord:
    """Chance floor: one uniformly chosen visible non-background instance."""
    cfg = cfg if cfg is not None else GenConfig()
    ids = eligible_visible(scene, sample.pose, cfg)
    if not ids:
        ids = sorted(m.id for m in scene.instances if not m.is_background)
    if not ids:
        raise ValidationError(f"scene {scene.scene_id} has no non-background instances")
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, int(sample.sample_id, 16)])
    choice = ids[int(rng.integers(len(ids)))]
    return PredictionRecord(sample_id=sample.sample_id, instance_ids=(choice,))


def score_predictions(samples, predictions: dict, scenes: dict) -> EvalReport:
    """Score a prediction map against samples and aggregate in one pass.

    `predictions` maps sample_id to PredictionRecord (absent = missing);
    `scenes` maps scene_id to SceneBundle.
    """
    expected = {}
    scores = []
    for sample in samples:
        expected[sample.sample_id] = sample.relation_set
        pred = predictions.get(sample.sample_id)
        if pred is None:
            continue
        scene = scenes.get(sample.scene_id)
        if scene is None:
            raise ValidationError(f"no scene bundle loaded for {sample.scene_id}")
        scores.append(sample_score(pred, sample, scene))
    return aggregate(scores, expected)
