"""Helpers for driving the generator CLI and corrupting copied corpora."""

import hashlib
import json
import shutil
import subprocess


def run_cli(*args):
    """Run the installed `viewrel` executable; assert success, return stdout."""
    stdout, _ = run_cli_capture(*args)
    return stdout


def run_cli_capture(*args):
    argv = ["viewrel", *[str(a) for a in args]]
    proc = subprocess.run(argv, capture_output=True, text=True)
    assert proc.returncode == 0, f"{argv} failed:\n{proc.stdout}\n{proc.stderr}"
    return proc.stdout, proc.stderr


def run_cli_json(*args):
    return json.loads(run_cli(*args))


def copy_corpus(src_root, dst_root):
    """Duplicate a (scenes, dataset) pair so a test can corrupt its own copy."""
    shutil.copytree(src_root, dst_root)
    return dst_root / "scenes", dst_root / "dataset"


def retoken(dataset_dir):
    """Recompute the determinism token and counts after editing shard lines.

    Mirrors what the generator would have recorded had it written the edited
    contents itself, so the reader accepts the files and the deeper
    per-sample checks get a chance to run.
    """
    manifest_path = dataset_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    hasher = hashlib.sha256()
    total = 0
    for entry in manifest["scenes"]:
        shard = dataset_dir / "samples" / f"{entry['scene_id']}.jsonl"
        count = 0
        with open(shard, encoding="utf-8") as fh:
            for line in fh:
                hasher.update(line.encode("utf-8"))
                count += 1
        entry["sample_count"] = count
        total += count
    manifest["total_samples"] = total
    manifest["determinism_token"] = hasher.hexdigest()
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def shard_paths(dataset_dir):
    return sorted((dataset_dir / "samples").glob("*.jsonl"))


def edit_shard_line(dataset_dir, shard_path, predicate, mutate):
    """Rewrite the first shard line matching `predicate` via `mutate(obj)`.

    Returns the edited object's sample_id; recomputes the dataset token so
    only per-sample checks can notice. Raises if nothing matched.
    """
    lines = shard_path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        obj = json.loads(line)
        if predicate(obj):
            mutate(obj)
            lines[i] = json.dumps(obj)
            shard_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            retoken(dataset_dir)
            return obj["sample_id"]
    raise AssertionError(f"no line in {shard_path} matches the predicate")
