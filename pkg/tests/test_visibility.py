import numpy as np
import pytest

from helpers import look_at
from viewrel.errors import ValidationError
from viewrel.geometry import CameraPose
from viewrel.scene import SceneBundle
from viewrel.visibility import (
    DepthBuffer,
    Intrinsics,
    VisibilityConfig,
    build_depth_buffer,
    project_point,
    visible_instances,
)

INTR = Intrinsics()
CFG = VisibilityConfig()


def scene_from_parts(parts, background_names=()):
    """parts: list of (label, points). Instance ids follow list order."""
    positions = []
    ids = []
    labels = {}
    for i, (label, pts) in enumerate(parts):
        positions.append(np.asarray(pts, dtype=np.float32))
        ids.append(np.full(len(pts), i, dtype=np.int32))
        labels[i] = label
    return SceneBundle.build(
        scene_id="vis",
        positions=np.vstack(positions),
        colors=np.zeros((sum(len(p) for p in positions), 3), dtype=np.uint8),
        point_instance=np.concatenate(ids),
        labels=labels,
    )


def box_at(center, half=0.3, n_side=5):
    """Dense axis-aligned box surface grid (front and back faces only)."""
    c = np.asarray(center, dtype=float)
    lin = np.linspace(-half, half, n_side)
    gx, gz = np.meshgrid(lin, lin)
    face = np.column_stack([gx.ravel(), np.zeros(gx.size), gz.ravel()])
    front = face + c - [0, half, 0]
    back = face + c + [0, half, 0]
    return np.vstack([front, back])


def wall_at(y, span_x=0.8, z_range=(0.2, 1.8), n_side=240):
    """Point sheet dense enough to fill every depth-buffer cell it covers.

    At depth y=1 a 160-wide buffer cell spans about 7 mm, so the grid pitch
    must stay below that for the sheet to actually occlude.
    """
    xs = np.linspace(-span_x, span_x, n_side)
    zs = np.linspace(z_range[0], z_range[1], n_side)
    gx, gz = np.meshgrid(xs, zs)
    return np.column_stack([gx.ravel(), np.full(gx.size, float(y)), gz.ravel()])


# camera at origin looking along +Y, world up +Z
POSE = look_at([0.0, 0.0, 1.0], [0.0, 5.0, 1.0])


class TestIntrinsics:
    def test_defaults(self):
        assert INTR.fx == INTR.fy == 577.87
        assert (INTR.width, INTR.height) == (640, 480)
        assert (INTR.near, INTR.far) == (0.1, 10.0)

    def test_validation(self):
        with pytest.raises(ValidationError):
            Intrinsics(fx=0.0)
        with pytest.raises(ValidationError):
            Intrinsics(near=2.0, far=1.0)
        with pytest.raises(ValidationError):
            Intrinsics(width=0)

    def test_round_trip_dict(self):
        again = Intrinsics.from_dict(INTR.as_dict())
        assert again == INTR


class TestVisibilityConfig:
    def test_validation(self):
        with pytest.raises(ValidationError):
            VisibilityConfig(theta_frustum=1.5)
        with pytest.raises(ValidationError):
            VisibilityConfig(delta_occ=0.0)

    def test_round_trip_dict(self):
        assert VisibilityConfig.from_dict(CFG.as_dict()) == CFG


class TestProjectPoint:
    def test_on_axis(self):
        assert project_point(INTR, (0.0, 0.0, 2.0)) == (320.0, 240.0, 2.0)

    def test_behind_camera(self):
        assert project_point(INTR, (0.0, 0.0, -1.0)) is None

    def test_off_image(self):
        # x large enough that u < 0 or u >= width
        assert project_point(INTR, (-10.0, 0.0, 2.0)) is None
        assert project_point(INTR, (10.0, 0.0, 2.0)) is None

    def test_clip_range_is_open(self):
        assert project_point(INTR, (0.0, 0.0, INTR.near)) is None
        assert project_point(INTR, (0.0, 0.0, INTR.far)) is None
        assert project_point(INTR, (0.0, 0.0, INTR.far - 1e-6)) is not None


class TestDepthBuffer:
    def test_min_rule_single_cell(self):
        scene = scene_from_parts([("chair", [[0.0, 2.0, 1.0], [0.0, 4.0, 1.0]])])
        buf = build_depth_buffer(scene, POSE, INTR, CFG)
        center = buf.grid[CFG.buffer_h // 2, CFG.buffer_w // 2]
        assert center == 2.0

    def test_empty_scene_buffer_is_infinite(self):
        scene = scene_from_parts([("chair", [[0.0, -3.0, 1.0]])])  # behind camera
        buf = build_depth_buffer(scene, POSE, INTR, CFG)
        assert np.all(np.isinf(buf.grid))

    def test_buffer_min_equals_min_in_frustum_depth(self):
        rng = np.random.default_rng(6)
        pts = rng.uniform([-2, 0.5, 0], [2, 8, 2], size=(500, 3))
        scene = scene_from_parts([("chair", pts)])
        buf = build_depth_buffer(scene, POSE, INTR, CFG)
        finite = buf.grid[np.isfinite(buf.grid)]
        from viewrel.geometry import world_to_camera

        cam = world_to_camera(POSE, scene.positions)
        zs = []
        for p in cam:
            if project_point(INTR, p) is not None:
                zs.append(p[2])
        assert zs, "fixture should have in-frustum points"
        assert np.isclose(finite.min(), min(zs))


class TestVisibleInstances:
    def test_single_box_on_axis_visible(self):
        scene = scene_from_parts([("chair", box_at([0.0, 2.0, 1.0]))])
        assert visible_instances(scene, POSE, INTR, CFG) == {0}

    def test_box_behind_camera_not_visible(self):
        scene = scene_from_parts([("chair", box_at([0.0, -2.0, 1.0]))])
        assert visible_instances(scene, POSE, INTR, CFG) == set()

    def test_occluding_wall_hides_box(self):
        target = box_at([0.0, 3.0, 1.0])
        scene_open = scene_from_parts([("chair", target)])
        assert visible_instances(scene_open, POSE, INTR, CFG) == {0}

        scene_blocked = scene_from_parts([("chair", target), ("wall", wall_at(1.0))])
        assert 0 not in visible_instances(scene_blocked, POSE, INTR, CFG)

    def test_background_occludes_but_never_appears(self):
        scene = scene_from_parts([("chair", box_at([0.0, 3.0, 1.0])), ("wall", wall_at(1.0))])
        vis = visible_instances(scene, POSE, INTR, CFG)
        assert 1 not in vis  # background id, despite filling the view

    def test_non_background_occluder_is_itself_visible(self):
        scene = scene_from_parts(
            [("chair", box_at([0.0, 3.0, 1.0])), ("cabinet", wall_at(1.0))]
        )
        vis = visible_instances(scene, POSE, INTR, CFG)
        assert vis == {1}

    def test_removing_occluders_grows_visible_set(self):
        rng = np.random.default_rng(7)
        boxes = [("chair", box_at([x, 3.0, 1.0])) for x in (-1.0, 0.0, 1.0)]
        blocked = scene_from_parts(boxes + [("wall", wall_at(1.0))])
        opened = scene_from_parts(boxes)
        before = visible_instances(blocked, POSE, INTR, CFG)
        after = visible_instances(opened, POSE, INTR, CFG)
        assert before <= after

    def test_frustum_fraction_threshold(self):
        # half the points far off-image: fraction inside = 0.5
        inside = box_at([0.0, 2.0, 1.0])
        outside = box_at([0.0, 2.0, 30.0])  # far above the vertical field of view
        pts = np.vstack([inside, outside])
        scene = scene_from_parts([("chair", pts)])
        strict = VisibilityConfig(theta_frustum=0.6)
        lenient = VisibilityConfig(theta_frustum=0.4)
        assert visible_instances(scene, POSE, INTR, strict) == set()
        assert visible_instances(scene, POSE, INTR, lenient) == {0}

    def test_no_in_frustum_points_never_visible_even_at_zero_thresholds(self):
        scene = scene_from_parts([("chair", box_at([0.0, -2.0, 1.0]))])
        zero = VisibilityConfig(theta_frustum=0.0, theta_unoccluded=0.0)
        assert visible_instances(scene, POSE, INTR, zero) == set()

    def test_determinism(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform([-2, 0.5, 0], [2, 8, 2], size=(300, 3))
        scene = scene_from_parts([("chair", pts[:150]), ("table", pts[150:])])
        first = visible_instances(scene, POSE, INTR, CFG)
        second = visible_instances(scene, POSE, INTR, CFG)
        assert first == second


class TestDepthBufferType:
    def test_depth_at_lookup(self):
        grid = np.full((2, 3), np.inf)
        grid[1, 2] = 4.5
        buf = DepthBuffer(grid=grid)
        out = buf.depth_at(np.array([2, 0]), np.array([1, 0]))
        assert out[0] == 4.5 and np.isinf(out[1])
