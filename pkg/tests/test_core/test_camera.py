import math

import numpy as np
import pytest

from vtds.core.camera import (
    Camera,
    CameraRig,
    Intrinsics,
    OnboardMount,
    OrientationSweep,
    RigKind,
    SurveillanceMount,
    adjacent_lane_rigs,
    camera_pose,
    look_rotation,
    project,
    surveillance_height,
    surveillance_yaw,
    unproject,
)
from vtds.core.errors import InactiveError
from vtds.core.geometry import Pose


def test_focal_length():
    assert Intrinsics().focal == pytest.approx(250.0 / math.tan(math.radians(30.0)))
    assert Intrinsics(200, 150, 90.0).focal == pytest.approx(100.0)


@pytest.mark.parametrize("kwargs", [{"width": 0}, {"fov": 180.0}, {"near": 0.0}])
def test_invalid_intrinsics(kwargs):
    with pytest.raises(ValueError):
        Intrinsics(**kwargs)


@pytest.mark.parametrize("yaw,pitch,roll", [(0.0, 0.0, 0.0), (1.2, 0.3, -0.4), (-2.5, -0.2, 0.9)])
def test_rotation_is_proper(yaw, pitch, roll):
    r = look_rotation(yaw, pitch, roll)
    assert np.allclose(r @ r.T, np.eye(3))
    assert np.linalg.det(r) == pytest.approx(1.0)


class TestProjection:
    def test_axes(self, square_camera):
        # looking east: south is right, up is up in the image
        assert project(square_camera, (10.0, 0.0, 0.0)) == pytest.approx((100.0, 75.0, 10.0))
        u, v, _ = project(square_camera, (10.0, -1.0, 0.0))
        assert u == pytest.approx(110.0)
        u, v, _ = project(square_camera, (10.0, 0.0, 1.0))
        assert v == pytest.approx(65.0)

    def test_behind_and_near(self, square_camera):
        assert project(square_camera, (-5.0, 0.0, 0.0)) is None
        assert project(square_camera, (0.4, 0.0, 0.0)) is None
        assert project(square_camera, (0.6, 0.0, 0.0)) is not None
        # the near plane itself is visible
        assert project(square_camera, (0.5, 0.0, 0.0)) == pytest.approx((100.0, 75.0, 0.5))

    def test_unproject_inverts_project(self):
        camera = Camera.looking((3.0, -2.0, 4.0), 0.8, 0.2, 0.1)
        rng = np.random.default_rng(0)
        for _ in range(20):
            u, v, z = rng.uniform(0, 500), rng.uniform(0, 375), rng.uniform(1, 200)
            point = unproject(camera, u, v, z)
            assert project(camera, point) == pytest.approx((u, v, z), abs=1e-6)

    def test_pitch_looks_down(self):
        camera = Camera.looking((0.0, 0.0, 10.0), 0.0, math.radians(30.0))
        ground = (10.0 / math.tan(math.radians(30.0)), 0.0, 0.0)
        u, v, _ = project(camera, ground)
        assert (u, v) == pytest.approx((250.0, 187.5))

    def test_roll_turns_the_image(self):
        k = Intrinsics(200, 150, 90.0)
        level = Camera.looking((0, 0, 0), 0.0, intrinsics=k)
        rolled = Camera.looking((0, 0, 0), 0.0, roll=math.pi / 2, intrinsics=k)
        point = (10.0, -2.0, 0.0)
        u0, v0, _ = project(level, point)
        u1, v1, _ = project(rolled, point)
        assert math.hypot(u0 - 100.0, v0 - 75.0) == pytest.approx(math.hypot(u1 - 100.0, v1 - 75.0))
        assert u1 == pytest.approx(100.0)


class TestSurveillance:
    def test_yaw_sweeps_back_and_forth(self):
        mount = SurveillanceMount(base_yaw=90.0, rotation_rate=10.0, rotation_range=180.0)
        yaws = [surveillance_yaw(mount, t) for t in (0.0, 9.0, 18.0, 27.0, 36.0)]
        assert yaws == pytest.approx([90.0, 180.0, 270.0, 180.0, 90.0])

    def test_height_stays_in_range(self):
        mount = SurveillanceMount(base_height=3.0, lift_rate=0.1, lift_range=(2.0, 5.0))
        assert surveillance_height(mount, 0.0) == pytest.approx(3.0)
        assert surveillance_height(mount, 20.0) == pytest.approx(5.0)
        assert surveillance_height(mount, 50.0) == pytest.approx(2.0)
        heights = [surveillance_height(mount, t) for t in np.linspace(0, 200, 401)]
        assert min(heights) >= 2.0 and max(heights) <= 5.0

    def test_static_mount(self):
        mount = SurveillanceMount(rotation_rate=0.0, lift_rate=0.0)
        rig = CameraRig(RigKind.SURVEILLANCE, surveillance=mount)
        a, b = camera_pose(rig, 0.0, {}), camera_pose(rig, 12.0, {})
        assert np.allclose(a.position, b.position)
        assert np.allclose(a.rotation, b.rotation)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lift_range": (5.0, 2.0)},
            {"base_height": 6.0},
            {"rotation_rate": -1.0},
        ],
    )
    def test_invalid_mount(self, kwargs):
        with pytest.raises(ValueError):
            SurveillanceMount(**kwargs)


class TestOnboard:
    def test_follows_host(self):
        rig = CameraRig(RigKind.ONBOARD, onboard=OnboardMount(host=3, height=2.0, lateral_offset=-5.0))
        camera = camera_pose(rig, 1.0, {3: Pose((10.0, 5.0, 0.0), 0.0)})
        assert np.allclose(camera.position, [10.0, 10.0, 2.0])
        assert np.allclose(camera.rotation[2], [1.0, 0.0, 0.0])

    def test_yaw_offset(self):
        rig = CameraRig(RigKind.ONBOARD).with_yaw_offset(90.0)
        camera = camera_pose(rig, 0.0, {0: Pose((0.0, 0.0, 0.0), 0.0)})
        # turned left, now looking north
        assert np.allclose(camera.rotation[2], [0.0, 1.0, 0.0])

    def test_inactive_host(self):
        with pytest.raises(InactiveError):
            camera_pose(CameraRig(RigKind.ONBOARD), 0.0, {1: Pose()})

    def test_orientation_sweep(self):
        sweep = OrientationSweep(CameraRig(RigKind.ONBOARD))
        assert len(sweep) == 5
        assert [r.onboard.yaw_offset for r in sweep] == [-30.0, -15.0, 0.0, 15.0, 30.0]
        with pytest.raises(ValueError):
            OrientationSweep(CameraRig(RigKind.SURVEILLANCE))

    def test_adjacent_lanes(self):
        rigs = adjacent_lane_rigs(CameraRig(RigKind.ONBOARD), count=3)
        assert [r.onboard.lateral_offset for r in rigs] == [0.0, -5.0, -10.0]

    def test_params(self):
        params = CameraRig(RigKind.ONBOARD).get_params()
        assert params["kind"] == "onboard"
        assert params["width"] == 500
        assert params["host"] == 0
