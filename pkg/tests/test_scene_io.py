import json

import numpy as np
import pytest

from helpers import random_pose
from viewrel.errors import ChecksumError, FormatError, ValidationError, VersionError
from viewrel.geometry import Axis
from viewrel.scene import (
    SceneBundle,
    content_checksum,
    instance_points,
    load_bundle,
    save_bundle,
)


def tiny_scene(trajectory=()):
    positions = np.array(
        [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 5.0, 1.0],
            [5.0, 6.0, 1.0],
            [2.0, 2.0, 0.0],
            [3.0, 3.0, 0.0],
        ],
        dtype=np.float32,
    )
    colors = np.arange(21, dtype=np.uint8).reshape(7, 3)
    point_instance = np.array([0, 0, 0, 1, 1, 2, 2], dtype=np.int32)
    labels = {0: "chair", 1: "table", 2: "floor"}
    return SceneBundle.build(
        scene_id="tiny",
        positions=positions,
        colors=colors,
        point_instance=point_instance,
        labels=labels,
        trajectory=trajectory,
    )


class TestBuild:
    def test_derives_instances(self):
        scene = tiny_scene()
        assert [m.id for m in scene.instances] == [0, 1, 2]
        assert scene.instance(1).point_count == 2
        assert scene.instance(2).is_background
        assert not scene.instance(0).is_background

    def test_instance_points_slice(self):
        scene = tiny_scene()
        pts = instance_points(scene, 1)
        assert np.array_equal(pts, scene.positions[3:5])

    def test_unknown_instance_raises(self):
        with pytest.raises(ValidationError):
            tiny_scene().instance(99)

    def test_label_without_points_raises(self):
        with pytest.raises(ValidationError):
            SceneBundle.build(
                scene_id="bad",
                positions=np.zeros((2, 3), dtype=np.float32),
                colors=np.zeros((2, 3), dtype=np.uint8),
                point_instance=np.array([0, 0], dtype=np.int32),
                labels={0: "chair", 7: "ghost"},
            )

    def test_dangling_point_reference_raises(self):
        with pytest.raises(ValidationError):
            SceneBundle.build(
                scene_id="bad",
                positions=np.zeros((2, 3), dtype=np.float32),
                colors=np.zeros((2, 3), dtype=np.uint8),
                point_instance=np.array([0, 3], dtype=np.int32),
                labels={0: "chair"},
            )

    def test_unassigned_points_allowed(self):
        scene = SceneBundle.build(
            scene_id="ok",
            positions=np.zeros((3, 3), dtype=np.float32),
            colors=np.zeros((3, 3), dtype=np.uint8),
            point_instance=np.array([0, -1, -1], dtype=np.int32),
            labels={0: "chair"},
        )
        assert scene.instance(0).point_count == 1


class TestRoundTrip:
    def test_save_load_preserves_everything(self, tmp_path):
        rng = np.random.default_rng(4)
        scene = tiny_scene(trajectory=(random_pose(rng), random_pose(rng)))
        save_bundle(scene, tmp_path / "b")
        loaded = load_bundle(tmp_path / "b")
        assert loaded.scene_id == "tiny"
        assert loaded.up_axis is Axis.Z
        assert np.array_equal(loaded.positions, scene.positions)
        assert np.array_equal(loaded.colors, scene.colors)
        assert np.array_equal(loaded.point_instance, scene.point_instance)
        assert len(loaded.trajectory) == 2
        for a, b in zip(loaded.trajectory, scene.trajectory):
            assert a == b
        assert [(m.id, m.label, m.is_background) for m in loaded.instances] == [
            (0, "chair", False),
            (1, "table", False),
            (2, "floor", True),
        ]
        assert content_checksum(loaded) == content_checksum(scene)

    def test_save_is_byte_deterministic(self, tmp_path):
        rng = np.random.default_rng(5)
        scene = tiny_scene(trajectory=(random_pose(rng),))
        save_bundle(scene, tmp_path / "one")
        save_bundle(scene, tmp_path / "two")
        for name in ("manifest.json", "points.bin", "trajectory.bin"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_content_checksum_tracks_geometry(self, tmp_path):
        scene = tiny_scene()
        moved = SceneBundle.build(
            scene_id="tiny",
            positions=scene.positions + np.float32(0.5),
            colors=scene.colors,
            point_instance=scene.point_instance,
            labels={0: "chair", 1: "table", 2: "floor"},
        )
        assert content_checksum(scene) != content_checksum(moved)


class TestLoadErrors:
    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FormatError, match="manifest"):
            load_bundle(tmp_path / "nope")

    def test_missing_points_file(self, tmp_path):
        save_bundle(tiny_scene(), tmp_path / "b")
        (tmp_path / "b" / "points.bin").unlink()
        with pytest.raises(FormatError, match="points.bin"):
            load_bundle(tmp_path / "b")

    def test_corrupt_points_checksum(self, tmp_path):
        save_bundle(tiny_scene(), tmp_path / "b")
        blob = bytearray((tmp_path / "b" / "points.bin").read_bytes())
        blob[0] ^= 0xFF
        (tmp_path / "b" / "points.bin").write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            load_bundle(tmp_path / "b")

    def test_truncated_points_with_fixed_checksum(self, tmp_path):
        import hashlib

        save_bundle(tiny_scene(), tmp_path / "b")
        p = tmp_path / "b" / "points.bin"
        blob = p.read_bytes()[:-19]
        p.write_bytes(blob)
        mpath = tmp_path / "b" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["checksums"]["points.bin"] = hashlib.sha256(blob).hexdigest()
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(FormatError, match="length"):
            load_bundle(tmp_path / "b")

    def test_unsupported_version(self, tmp_path):
        save_bundle(tiny_scene(), tmp_path / "b")
        mpath = tmp_path / "b" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["version"] = 99
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(VersionError):
            load_bundle(tmp_path / "b")

    def test_not_a_bundle_manifest(self, tmp_path):
        d = tmp_path / "b"
        d.mkdir()
        (d / "manifest.json").write_text("{\"format\": \"other\"}")
        with pytest.raises(FormatError, match="not a"):
            load_bundle(d)

    def test_malformed_manifest_json(self, tmp_path):
        d = tmp_path / "b"
        d.mkdir()
        (d / "manifest.json").write_text("{nope")
        with pytest.raises(FormatError, match="malformed"):
            load_bundle(d)

    def test_instance_count_mismatch(self, tmp_path):
        save_bundle(tiny_scene(), tmp_path / "b")
        mpath = tmp_path / "b" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["instances"][0]["point_count"] = 7
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(FormatError, match="point_count"):
            load_bundle(tmp_path / "b")
