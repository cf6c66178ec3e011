"""Command-line pipeline driver.

Subcommands cover the full workflow: synthesize or convert scene bundles,
generate a dataset, inspect it (stats, prompts), run reference solvers, score
prediction files, and re-validate a dataset against its scenes. Progress and
diagnostics go to standard error; machine-readable output goes to standard
output or to files. Dataset-producing commands build into a staging directory
and rename it into place, so a crashed run never leaves a half-written output
behind. Each of them also records the merged configuration, input checksums,
and tool version in a run.json next to the output.

Exit codes: 0 success, 1 domain or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import importlib.metadata
import json
import logging
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

from .dataset_io import (
    DatasetWriter,
    read_predictions,
    read_samples,
    render_prompt,
    write_predictions,
)
from .errors import FormatError, ValidationError, ViewrelError
from .evaluation import blind_solver, oracle_solver, random_solver, score_predictions
from .relations import RelationConfig
from .sampler import (
    GenConfig,
    annotate_viewpoint,
    compute_stats,
    generate_dataset,
    select_viewpoints,
)
from .sampler import _scene_seed as scene_selection_seed
from .scannet import convert_scannet
from .scene import DEFAULT_BACKGROUND_LABELS, content_checksum, load_bundle, save_bundle
from .synth import ORBIT, TRAJECTORY_WALK, SynthConfig, make_opposed_pair, make_room

log = logging.getLogger(__name__)

try:
    TOOL_VERSION = importlib.metadata.version("viewrel")
except importlib.metadata.PackageNotFoundError:
    TOOL_VERSION = "0+unknown"


@contextmanager
def _staged_dir(final: Path):
    """Create the output directory atomically: build in .partial, then rename."""
    if final.exists():
        raise ValidationError(f"output path already exists: {final}")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.with_name(final.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.replace(tmp, final)


@contextmanager
def _staged_file(final: Path):
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.with_name(final.name + ".partial")
    try:
        yield tmp
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise
    os.replace(tmp, final)


def _write_run_record(directory: Path, subcommand: str, config: dict, inputs: dict):
    record = {
        "tool": "viewrel",
        "version": TOOL_VERSION,
        "subcommand": subcommand,
        "config": config,
        "inputs": inputs,
    }
    text = json.dumps(record, indent=2, sort_keys=True) + "\n"
    (directory / "run.json").write_text(text, encoding="utf-8", newline="\n")


def _load_scene_map(scenes_dir) -> dict:
    root = Path(scenes_dir)
    if not root.is_dir():
        raise FormatError(f"not a scene directory: {root}")
    scenes = {}
    for child in sorted(root.iterdir()):
        if child.is_dir() and (child / "manifest.json").is_file():
            scene = load_bundle(child)
            scenes[scene.scene_id] = scene
    if not scenes:
        raise FormatError(f"{root}: no scene bundles found")
    return scenes


def _default_workers() -> int:
    raw = os.environ.get("VIEWREL_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"VIEWREL_WORKERS must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------- synth


def _cmd_synth(args) -> int:
    base = SynthConfig(
        seed=args.seed,
        room_extents=tuple(args.room),
        n_instances=args.instances,
        points_per_instance=args.points_per_instance,
        pose_count=args.pose_count,
        pose_strategy=args.pose_strategy,
        stack_prob=args.stack_prob,
    )
    config = {
        "seed": args.seed,
        "scenes": args.scenes,
        "room_extents": list(args.room),
        "n_instances": args.instances,
        "points_per_instance": args.points_per_instance,
        "pose_count": args.pose_count,
        "pose_strategy": args.pose_strategy,
        "stack_prob": args.stack_prob,
        "opposed_pairs": args.opposed_pairs,
    }
    out = Path(args.out)
    with _staged_dir(out) as tmp:
        checksums = {}
        from dataclasses import replace

        for i in range(args.scenes):
            cfg = replace(base, seed=args.seed + i)
            if args.opposed_pairs:
                scene, _, _ = make_opposed_pair(cfg)
            else:
                scene = make_room(cfg)
            save_bundle(scene, tmp / scene.scene_id)
            checksums[scene.scene_id] = content_checksum(scene)
            log.info("synthesized %s (%d instances)", scene.scene_id, len(scene.instances))
        _write_run_record(tmp, "synth", config, checksums)
    print(f"wrote {args.scenes} scenes to {out}")
    return 0


# ---------------------------------------------------------------- convert


def _looks_like_scan(path: Path) -> bool:
    return path.is_dir() and any(path.glob("*.ply"))


def _cmd_convert(args) -> int:
    scan_root = Path(args.scan_dir)
    background = frozenset(s.strip().lower() for s in args.background.split(",") if s.strip())
    if _looks_like_scan(scan_root):
        scan_dirs = [scan_root]
    else:
        scan_dirs = sorted(p for p in scan_root.iterdir() if _looks_like_scan(p))
        if not scan_dirs:
            raise FormatError(f"{scan_root}: no scan directories found")
    out = Path(args.out)
    with _staged_dir(out) as tmp:
        inputs = {}
        for scan in scan_dirs:
            scene = convert_scannet(scan, background_labels=background)
            save_bundle(scene, tmp / scene.scene_id)
            inputs[scene.scene_id] = content_checksum(scene)
            log.info(
                "converted %s: %d points, %d instances, %d poses",
                scene.scene_id, scene.point_count, len(scene.instances),
                len(scene.trajectory),
            )
        _write_run_record(
            tmp, "convert", {"background_labels": sorted(background)}, inputs
        )
    print(f"converted {len(scan_dirs)} scans to {out}")
    return 0


# ---------------------------------------------------------------- generate


_GEN_FIELDS = {
    "viewpoints_per_scene", "viewpoint_strategy", "seed",
    "relation", "visibility", "intrinsics", "min_instance_points",
}


def _merged_gen_config(args) -> GenConfig:
    """Defaults, overlaid by --config file, overlaid by explicit flags."""
    merged = GenConfig().as_dict()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise FormatError(f"missing config file: {path}")
        try:
            overlay = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: malformed config: {exc}") from exc
        for key, value in overlay.items():
            if key not in _GEN_FIELDS:
                raise ValidationError(f"{path}: unknown config field {key!r}")
            if isinstance(value, dict):
                merged[key].update(value)
            else:
                merged[key] = value
    if args.viewpoints is not None:
        merged["viewpoints_per_scene"] = args.viewpoints
    if args.viewpoint_strategy is not None:
        merged["viewpoint_strategy"] = args.viewpoint_strategy
    if args.seed is not None:
        merged["seed"] = args.seed
    if args.tau is not None:
        merged["relation"]["tau"] = args.tau
    if args.min_instance_points is not None:
        merged["min_instance_points"] = args.min_instance_points
    return GenConfig.from_dict(merged)


def _cmd_generate(args) -> int:
    cfg = _merged_gen_config(args)
    scenes = _load_scene_map(args.scenes)
    checksums = {sid: content_checksum(s) for sid, s in scenes.items()}
    out = Path(args.out)
    pair_log: list | None = [] if args.pair_log else None
    with _staged_dir(out) as tmp:
        writer = DatasetWriter(tmp, cfg.as_dict(), checksums)
        stats = generate_dataset(
            list(scenes.values()), cfg, writer, workers=args.workers, pair_log=pair_log
        )
        manifest = writer.finalize()
        _write_run_record(tmp, "generate", cfg.as_dict(), checksums)
    if pair_log is not None:
        with _staged_file(Path(args.pair_log)) as tmp_log:
            with open(tmp_log, "w", encoding="utf-8", newline="\n") as fh:
                for entry in pair_log:
                    fh.write(json.dumps(entry) + "\n")
    print(
        f"wrote {stats.total} samples across {len(manifest.scenes)} scenes to {out} "
        f"(token {manifest.determinism_token[:12]})"
    )
    for entry in manifest.skipped_scenes:
        print(f"skipped {entry['scene_id']}: {entry['reason']}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- inspection


def _cmd_stats(args) -> int:
    manifest, samples = read_samples(args.dataset)
    recomputed = compute_stats(samples)
    if recomputed != manifest.stats:
        raise ValidationError(
            "stats recomputed from sample lines disagree with the manifest"
        )
    if args.json:
        print(json.dumps({"total": recomputed.total, "counts": recomputed.as_dict()}, indent=2))
        return 0
    width = max(len(k) for k in recomputed.counts)
    print(f"{'relation set':<{width}}  count")
    print("-" * (width + 7))
    for key, count in recomputed.rows():
        print(f"{key:<{width}}  {count:>5}")
    print("-" * (width + 7))
    print(f"{'total':<{width}}  {recomputed.total:>5}")
    return 0


def _cmd_prompts(args) -> int:
    _, samples = read_samples(args.dataset)
    count = 0
    for sample in samples:
        if args.limit is not None and count >= args.limit:
            break
        print(f"{sample.sample_id}\t{render_prompt(sample)}")
        count += 1
    return 0


# ---------------------------------------------------------------- eval


def _cmd_eval(args) -> int:
    _, samples = read_samples(args.dataset)
    scenes = _load_scene_map(args.scenes)
    known = {s.sample_id for s in samples}
    predictions, diags = read_predictions(args.predictions, known_ids=known)
    if diags.duplicates:
        print(f"note: {diags.duplicates} duplicate predictions, kept last", file=sys.stderr)
    if diags.unknown:
        print(
            f"note: {diags.unknown} predictions for unknown samples dropped "
            f"(first: {', '.join(diags.unknown_ids)})",
            file=sys.stderr,
        )
    report = score_predictions(samples, predictions, scenes)
    if args.out:
        with _staged_file(Path(args.out)) as tmp:
            tmp.write_text(json.dumps(report.as_dict(), indent=2) + "\n", encoding="utf-8")
    if args.json:
        print(json.dumps(report.as_dict(), indent=2))
    else:
        print(report.format_table())
    return 0


_SOLVERS = ("oracle", "blind", "random")


def _cmd_baseline(args) -> int:
    manifest, samples = read_samples(args.dataset)
    scenes = _load_scene_map(args.scenes)
    cfg = GenConfig.from_dict(manifest.config)
    records = []
    for sample in samples:
        scene = scenes.get(sample.scene_id)
        if scene is None:
            raise ValidationError(f"dataset references scene {sample.scene_id} not in {args.scenes}")
        if args.solver == "oracle":
            records.append(oracle_solver(sample, scene, cfg))
        elif args.solver == "blind":
            records.append(blind_solver(sample, scene, cfg))
        else:
            records.append(random_solver(sample, scene, seed=args.seed, cfg=cfg))
    out = Path(args.out)
    with _staged_file(out) as tmp:
        write_predictions(records, tmp)
    print(f"wrote {len(records)} {args.solver} predictions to {out}")
    return 0


# ---------------------------------------------------------------- validate


def _cmd_validate(args) -> int:
    manifest, samples = read_samples(args.dataset)
    scenes = _load_scene_map(args.scenes)
    cfg = GenConfig.from_dict(manifest.config)
    violations: list[str] = []

    listed = {e.scene_id: e for e in manifest.scenes}
    for scene_id, entry in listed.items():
        scene = scenes.get(scene_id)
        if scene is None:
            violations.append(f"scene {scene_id}: bundle not found in {args.scenes}")
            continue
        actual = content_checksum(scene)
        if actual != entry.checksum:
            violations.append(
                f"scene {scene_id}: bundle checksum {actual[:12]} does not match "
                f"manifest {entry.checksum[:12]}"
            )

    regenerated = {}
    for scene_id, scene in scenes.items():
        if scene_id not in listed:
            continue
        if any(v.startswith(f"scene {scene_id}:") for v in violations):
            continue
        chosen = select_viewpoints(
            scene.trajectory,
            cfg.viewpoints_per_scene,
            cfg.viewpoint_strategy,
            seed=scene_selection_seed(cfg.seed, scene_id),
        )
        for viewpoint_id, pose in chosen:
            for s in annotate_viewpoint(scene, viewpoint_id, pose, cfg):
                regenerated[s.sample_id] = s

    in_file = {s.sample_id: s for s in samples}
    for sample_id, sample in in_file.items():
        want = regenerated.get(sample_id)
        if want is None:
            violations.append(f"sample {sample_id}: not reproducible from its scene")
        elif want != sample:
            violations.append(f"sample {sample_id}: fields disagree with regeneration")
    for sample_id in regenerated:
        if sample_id not in in_file:
            violations.append(f"sample {sample_id}: missing from dataset")

    if compute_stats(samples) != manifest.stats:
        violations.append("manifest stats disagree with sample lines")

    for line in violations:
        print(f"violation: {line}")
    print(
        f"validated {len(samples)} samples across {len(listed)} scenes: "
        f"{len(violations)} violations"
    )
    return 1 if violations else 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viewrel",
        description="Generate and evaluate viewpoint-dependent spatial referring datasets.",
    )
    parser.add_argument(
        "-v", "--verbose", action="count", default=0,
        help="-v for progress, -vv for debug output (standard error)",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synth", help="synthesize a corpus of scene bundles")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=1, help="number of scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=8)
    p.add_argument("--points-per-instance", type=int, default=96)
    p.add_argument("--pose-count", type=int, default=12)
    p.add_argument("--pose-strategy", choices=(ORBIT, TRAJECTORY_WALK), default=ORBIT)
    p.add_argument("--stack-prob", type=float, default=0.35)
    p.add_argument("--room", type=float, nargs=3, default=(8.0, 8.0, 3.0),
                   metavar=("LX", "LY", "LZ"))
    p.add_argument("--opposed-pairs", action="store_true",
                   help="two facing poses per scene instead of an orbit")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("convert", help="convert raw scan directories to bundles")
    p.add_argument("--scan-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--background", default=",".join(sorted(DEFAULT_BACKGROUND_LABELS)),
                   help="comma-separated background labels")
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("generate", help="annotate scenes into a dataset")
    p.add_argument("--scenes", required=True, help="directory of scene bundles")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with generation settings")
    p.add_argument("--viewpoints", type=int)
    p.add_argument("--viewpoint-strategy", choices=("uniform-stride", "random"))
    p.add_argument("--seed", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--min-instance-points", type=int)
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--pair-log", help="write per-viewpoint relation pair counts (JSONL)")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("stats", help="print per-category sample counts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("prompts", help="print rendered referring expressions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--limit", type=int)
    p.set_defaults(func=_cmd_prompts)

    p = sub.add_parser("eval", help="score a prediction file against a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", help="also write the report as JSON")
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("baseline", help="run a reference solver over a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--solver", choices=_SOLVERS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="random solver seed")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("validate", help="re-derive every sample and compare")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenes", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ViewrelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
