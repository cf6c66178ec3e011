"""Ingest ScanNet-v2-style scan directories into scene bundles.

A scan directory is expected to hold a PLY point file with per-vertex colors,
a JSON file mapping each vertex to an over-segmentation id, an aggregation
JSON grouping segments into labeled object instances, and a pose/ directory
of per-frame 4x4 camera-to-world matrices in plain text.

The PLY reader is deliberately minimal: ascii and binary_little_endian
vertex blocks only, which covers the published scan layout. Faces are never
read; the vertex element must come first.
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .geometry import Axis, CameraPose
from .scene import DEFAULT_BACKGROUND_LABELS, UNASSIGNED, SceneBundle

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
    "uchar": "u1", "uint8": "u1",
    "char": "i1", "int8": "i1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
}


def _read_ply_header(fh):
    """Parse up to end_header; returns (format, vertex_count, vertex_props)."""
    magic = fh.readline().strip()
    if magic != b"ply":
        raise FormatError("not a PLY file (missing 'ply' magic)")
    fmt = None
    elements = []  # (name, count, [(prop_name, prop_type)])
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError("PLY header ended before end_header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise FormatError("PLY property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], "list"))
            else:
                elements[-1][2].append((parts[-1], parts[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    if not elements or elements[0][0] != "vertex":
        raise FormatError("PLY vertex element must come first")
    name, count, props = elements[0]
    for prop_name, prop_type in props:
        if prop_type == "list":
            raise FormatError(f"list-typed vertex property {prop_name!r} unsupported")
        if prop_type not in _PLY_TYPES:
            raise FormatError(f"unknown PLY property type {prop_type!r}")
    return fmt, count, props


def read_ply_vertices(path) -> tuple[np.ndarray, np.ndarray]:
    """Positions (N,3) float32 and colors (N,3) uint8 from a PLY file."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, count, props = _read_ply_header(fh)
        names = [n for n, _ in props]
        for needed in ("x", "y", "z", "red", "green", "blue"):
            if needed not in names:
                raise FormatError(f"{path}: vertex element lacks property {needed!r}")
        dtype = np.dtype([(n, _PLY_TYPES[t]) for n, t in props])
        if fmt == "binary_little_endian":
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise FormatError(f"{path}: truncated vertex block")
            verts = np.frombuffer(buf, dtype=dtype, count=count)
        else:
            rows = []
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise FormatError(f"{path}: truncated ascii vertex block at row {i}")
                tokens = line.split()
                if len(tokens) != len(props):
                    raise FormatError(
                        f"{path}: vertex row {i} has {len(tokens)} fields, "
                        f"expected {len(props)}"
                    )
                rows.append(tuple(float(t) for t in tokens))
            verts = np.array(rows, dtype=[(n, "<f8") for n in names]).astype(dtype)
    positions = np.stack(
        [verts["x"], verts["y"], verts["z"]], axis=1
    ).astype(np.float32)
    colors = np.stack(
        [verts["red"], verts["green"], verts["blue"]], axis=1
    ).astype(np.uint8)
    return positions, colors


def _single_match(scan_dir: Path, pattern: str, kind: str) -> Path:
    matches = sorted(scan_dir.glob(pattern))
    if not matches:
        raise FormatError(f"{scan_dir}: no {kind} file matching {pattern!r}")
    return matches[0]


def _find_point_file(scan_dir: Path) -> Path:
    preferred = sorted(scan_dir.glob("*_vh_clean_2.ply"))
    if preferred:
        return preferred[0]
    plys = sorted(p for p in scan_dir.glob("*.ply") if not p.name.endswith(".labels.ply"))
    if not plys:
        raise FormatError(f"{scan_dir}: no point file (*.ply)")
    return plys[0]


def _load_segments(path: Path, n_points: int) -> np.ndarray:
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed segment file: {exc}") from exc
    if "segIndices" not in obj:
        raise FormatError(f"{path}: missing segIndices")
    seg = np.asarray(obj["segIndices"], dtype=np.int64)
    if seg.shape != (n_points,):
        raise FormatError(
            f"{path}: {seg.size} segment indices for {n_points} points"
        )
    return seg


def _load_aggregation(path: Path):
    """[(instance id, label, segment id list)] from an aggregation file."""
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed aggregation file: {exc}") from exc
    groups = obj.get("segGroups")
    if not groups:
        raise FormatError(f"{path}: aggregation lists no object instances")
    out = []
    for g in groups:
        inst_id = g.get("objectId", g.get("id"))
        if inst_id is None or "label" not in g or "segments" not in g:
            raise FormatError(f"{path}: segGroup missing objectId/label/segments")
        out.append((int(inst_id), str(g["label"]), [int(s) for s in g["segments"]]))
    return out


def _frame_index(path: Path) -> int:
    m = re.search(r"(\d+)", path.stem)
    return int(m.group(1)) if m else 0


def load_pose_trajectory(pose_dir: Path) -> tuple[tuple[CameraPose, ...], int]:
    """Poses ordered by frame index, plus the number of dropped frames.

    Frames containing non-finite entries are dropped silently (ScanNet marks
    untracked frames with inf); so are the rare frames whose rotation block
    is not orthonormal, which the pose type would reject. A file that does
    not parse into 16 numbers at all is an error, not a drop.
    """
    files = sorted(pose_dir.glob("*.txt"), key=_frame_index)
    if not files:
        raise FormatError(f"{pose_dir}: no pose files (*.txt)")
    poses = []
    dropped = 0
    for f in files:
        tokens = f.read_text(encoding="utf-8").split()
        if len(tokens) != 16:
            raise FormatError(f"{f}: expected 16 pose entries, got {len(tokens)}")
        try:
            values = np.array([float(t) for t in tokens], dtype=float)
        except ValueError as exc:
            raise FormatError(f"{f}: non-numeric pose entry: {exc}") from exc
        if not np.all(np.isfinite(values)):
            dropped += 1
            continue
        try:
            poses.append(CameraPose(values.reshape(4, 4)))
        except ValidationError:
            dropped += 1
    if not poses:
        raise FormatError(f"{pose_dir}: no usable poses after dropping {dropped} frames")
    return tuple(poses), dropped


def convert_scannet(
    scan_dir,
    background_labels: frozenset[str] = DEFAULT_BACKGROUND_LABELS,
) -> SceneBundle:
    """Build a validated SceneBundle from one scan directory.

    The bundle keeps the scan's Z-up world frame. Instances whose segments
    never appear in the segment index map would own zero points; they are
    dropped with a warning rather than emitted.
    """
    scan_dir = Path(scan_dir)
    if not scan_dir.is_dir():
        raise FormatError(f"not a scan directory: {scan_dir}")
    point_file = _find_point_file(scan_dir)
    positions, colors = read_ply_vertices(point_file)
    n = len(positions)

    seg_file = _single_match(scan_dir, "*segs.json", "segment-index")
    segments = _load_segments(seg_file, n)

    agg_file = _single_match(scan_dir, "*aggregation*.json", "aggregation")
    groups = _load_aggregation(agg_file)

    seg_to_instance: dict[int, int] = {}
    labels: dict[int, str] = {}
    for inst_id, label, segs in groups:
        if inst_id in labels:
            raise FormatError(f"{agg_file}: duplicate instance id {inst_id}")
        labels[inst_id] = label
        for s in segs:
            seg_to_instance[s] = inst_id

    point_instance = np.full(n, UNASSIGNED, dtype=np.int32)
    for s, inst_id in seg_to_instance.items():
        point_instance[segments == s] = inst_id

    present = set(np.unique(point_instance[point_instance != UNASSIGNED]).tolist())
    for inst_id in sorted(set(labels) - present):
        log.warning(
            "scan %s: instance %d (%s) owns no points, dropping",
            scan_dir.name, inst_id, labels[inst_id],
        )
        del labels[inst_id]
    if not labels:
        raise FormatError(f"{scan_dir}: no instance owns any points")

    pose_dir = scan_dir / "pose"
    if not pose_dir.is_dir():
        raise FormatError(f"{scan_dir}: missing pose directory")
    trajectory, dropped = load_pose_trajectory(pose_dir)
    if dropped:
        log.info("scan %s: dropped %d unusable pose frames", scan_dir.name, dropped)

    return SceneBundle.build(
        scene_id=scan_dir.name,
        positions=positions,
        colors=colors,
        point_instance=point_instance,
        labels=labels,
        up_axis=Axis.Z,
        trajectory=trajectory,
        background_labels=frozenset(s.lower() for s in background_labels),
    )
