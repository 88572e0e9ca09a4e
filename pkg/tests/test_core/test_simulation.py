import numpy as np
import pytest

from vtds.core.camera import CameraRig, Intrinsics, OnboardMount, RigKind, SurveillanceMount
from vtds.core.dynamics import Trajectory, VehicleCensus
from vtds.core.environment import EnvironmentSchedule
from vtds.core.geometry import box
from vtds.core.ground_truth import detection_boxes, flow_field, occlusion_rate, tracks
from vtds.core.scene import PropPolicy
from vtds.core.semantics import SemanticClass
from vtds.core.simulation import Simulation

from tests.helpers import ORIGIN

SMALL = Intrinsics(200, 150, 90.0, 0.5)


def static_rig(intrinsics=SMALL):
    mount = SurveillanceMount(
        position=(0.0, 0.0), base_height=2.0, base_yaw=0.0, rotation_rate=0.0, lift_rate=0.0, pitch=5.0
    )
    return CameraRig(RigKind.SURVEILLANCE, intrinsics=intrinsics, surveillance=mount)


class TestCrossingCar:
    """
    A car driving north across the view of a fixed camera that looks east at a
    wall.
    """

    @pytest.fixture
    def simulation(self):
        wall = box((40.0, 0.0), (1.0, 200.0, 30.0), -5.0, SemanticClass.BUILDING, (0.6, 0.6, 0.6))
        return (
            Simulation(seed=3, frame_rate=10.0)
            .add_trajectories([Trajectory([[10.0, -10.0], [10.0, 30.0]], start_offset=5.0, speed=5.0)])
            .add_static(wall)
            .add_camera(static_rig())
            .build()
        )

    def test_requires_camera(self):
        with pytest.raises(ValueError):
            Simulation().build()

    def test_rejects_missing_host(self):
        rig = CameraRig(RigKind.ONBOARD, onboard=OnboardMount(host=2))
        with pytest.raises(ValueError):
            Simulation().add_trajectories([Trajectory([[0, 0], [10, 0]])]).add_camera(rig).build()

    def test_vehicles_need_a_map(self):
        with pytest.raises(ValueError):
            Simulation().add_vehicles(VehicleCensus(moving={"car": 1}))

    def test_frame_clock(self, simulation):
        assert simulation.time_of(3) == pytest.approx(0.3)
        assert simulation.frame_index_at(0.3) == 3
        assert simulation.frame_index_at(0.29) == 2

    def test_frame_state(self, simulation):
        state = simulation.frame_state(4)
        assert state.time == pytest.approx(0.4)
        assert [inst.instance_id for inst in state.instances] == [1]
        assert state.vehicle_poses[1].position == pytest.approx((10.0, -3.0, 0.0))

    def test_box_covers_car(self, simulation):
        for index in (0, 5, 10):
            frame = simulation.render(index)
            (b,) = detection_boxes(frame.state, frame.gbuffer, frame.camera)
            rows, cols = np.nonzero(frame.gbuffer.instance_id == 1)
            assert len(rows)
            assert b.track_id == 1
            assert (cols + 0.5 >= b.x_min).all() and (cols + 0.5 <= b.x_max).all()
            assert (rows + 0.5 >= b.y_min).all() and (rows + 0.5 <= b.y_max).all()

    def test_flow_moves_car_left(self, simulation):
        before, after = simulation.render(2), simulation.render(3)
        flow = flow_field(after.gbuffer, after.state, before.state, after.camera, before.camera)
        car = after.gbuffer.instance_id == 1
        wall = after.gbuffer.class_id == SemanticClass.BUILDING.value
        assert flow.valid[car].all()
        # northward motion is leftward in an east-looking camera
        assert (flow.u[car] < 0).all()
        assert np.allclose(flow.u[wall], 0.0, atol=1e-6)
        assert np.allclose(flow.v[wall], 0.0, atol=1e-6)

    def test_track_persists(self, simulation):
        per_frame = []
        for index in range(6):
            frame = simulation.render(index)
            per_frame.append(detection_boxes(frame.state, frame.gbuffer, frame.camera))
        table = tracks(per_frame)
        assert table.track_ids == [1]
        assert len(table.segments[1]) == 1
        assert len(table.segments[1][0]) == 6

    def test_render_is_deterministic(self, simulation):
        a, b = simulation.render(7), simulation.render(7)
        assert np.array_equal(a.rgb, b.rgb)
        assert np.array_equal(a.gbuffer.depth, b.gbuffer.depth)

    def test_params(self, simulation):
        params = simulation.get_params()
        assert params["seed"] == 3
        assert params["n_vehicles"] == 1
        assert params["n_dynamic"] == 1
        assert params["camera"]["kind"] == "surveillance"


class TestOccludedCar:
    """
    The crossing car passes behind a pillar halfway between it and the camera.
    """

    @staticmethod
    def simulation(with_pillar):
        builder = Simulation(seed=3, frame_rate=10.0).add_trajectories(
            [Trajectory([[10.0, -10.0], [10.0, 30.0]], start_offset=5.0, speed=5.0)]
        )
        if with_pillar:
            builder.add_static(box((5.0, 0.0), (0.2, 3.0, 6.0), -1.0, SemanticClass.BUILDING, (0.4, 0.4, 0.4)))
        return builder.add_camera(static_rig()).build()

    @staticmethod
    def annotate(simulation, frames):
        per_frame, rates = [], []
        for index in frames:
            frame = simulation.render(index)
            per_frame.append(detection_boxes(frame.state, frame.gbuffer, frame.camera))
            rates.append(occlusion_rate(1, frame.state, frame.camera, frame.gbuffer))
        return tracks(per_frame), rates

    def test_track_splits_behind_pillar(self):
        frames = range(21)
        table, rates = self.annotate(self.simulation(with_pillar=True), frames)
        first, second = table.segments[1]
        assert first.first_frame == 0 and second.last_frame == 20
        gap = range(first.last_frame + 1, second.first_frame)
        assert 10 in gap
        assert rates[10] == pytest.approx(1.0)
        for index in frames:
            assert (rates[index] > 0.75) == (index in gap)

    def test_unobstructed_track_is_whole(self):
        table, rates = self.annotate(self.simulation(with_pillar=False), range(21))
        (segment,) = table.segments[1]
        assert len(segment) == 21
        assert max(rates) == pytest.approx(0.0)


class TestFixtureCity:
    @pytest.fixture(scope="class")
    def simulation(self, fixture_map, facade_program):
        rig = CameraRig(RigKind.ONBOARD, intrinsics=Intrinsics(100, 75, 60.0, 0.5))
        return (
            Simulation(seed=7, frame_rate=10.0)
            .add_map(fixture_map, ORIGIN)
            .add_rules(facade_program)
            .add_props(PropPolicy.disabled())
            .add_vehicles(VehicleCensus(parked={"car": 6}, moving={"car": 3}))
            .add_camera(rig)
            .build()
        )

    def test_host_is_not_rendered(self, simulation):
        host_instance = simulation.scene.dynamic[0].instance_id
        for index in (0, 4):
            state = simulation.frame_state(index)
            frame = simulation.render(index, state)
            assert host_instance not in [inst.instance_id for inst in state.instances]
            assert host_instance not in state.vehicle_poses
            assert not (frame.gbuffer.instance_id == host_instance).any()

    def test_camera_rides_with_host(self, simulation):
        camera = simulation.camera_at(5)
        host = simulation.vehicle_poses(simulation.time_of(5))[0]
        assert camera.position[:2] == pytest.approx(host.position[:2])
        assert camera.position[2] == pytest.approx(2.0)

    def test_labels_do_not_depend_on_environment(self, simulation):
        original = simulation.schedule
        labels, images = [], []
        try:
            for hour in (6.0, 12.0):
                for weather in ("sunny", "foggy"):
                    simulation.schedule = EnvironmentSchedule(weather=weather, time_of_day=hour)
                    frame = simulation.render(3)
                    labels.append((frame.gbuffer.class_id, frame.gbuffer.instance_id, frame.gbuffer.depth))
                    images.append(frame.rgb)
        finally:
            simulation.schedule = original
        for class_id, instance_id, depth in labels[1:]:
            assert np.array_equal(class_id, labels[0][0])
            assert np.array_equal(instance_id, labels[0][1])
            assert np.array_equal(depth, labels[0][2])
        assert not np.array_equal(images[0], images[-1])

    def test_road_is_visible(self, simulation):
        frame = simulation.render(0)
        assert (frame.gbuffer.class_id == SemanticClass.ROAD.value).any()
        assert frame.rgb.shape == (75, 100, 3)

    def test_prebuilt_network(self, simulation, fixture_network, facade_program):
        shared = (
            Simulation(seed=7, frame_rate=10.0)
            .add_network(fixture_network)
            .add_rules(facade_program)
            .add_props(PropPolicy.disabled())
            .add_vehicles(VehicleCensus(parked={"car": 6}, moving={"car": 3}))
            .add_camera(simulation.rig)
            .build()
        )
        assert shared.get_params()["n_static"] == simulation.get_params()["n_static"]
        assert np.array_equal(shared.render(1).gbuffer.instance_id, simulation.render(1).gbuffer.instance_id)

    def test_deterministic_rebuild(self, simulation, fixture_map, facade_program):
        again = (
            Simulation(seed=7, frame_rate=10.0)
            .add_map(fixture_map, ORIGIN)
            .add_rules(facade_program)
            .add_props(PropPolicy.disabled())
            .add_vehicles(VehicleCensus(parked={"car": 6}, moving={"car": 3}))
            .add_camera(simulation.rig)
            .build()
        )
        assert np.array_equal(again.render(2).rgb, simulation.render(2).rgb)
