import math

import numpy as np
import pytest

from vtds.core.dynamics import Trajectory
from vtds.core.osm_map import RoadNetwork, RoadSegment
from vtds.core.scene import (
    VEHICLE_DIMENSIONS,
    PropPolicy,
    VehicleKind,
    assemble_scene,
    generate_road_mesh,
    place_props,
    vehicle_mesh,
)
from vtds.core.semantics import SemanticClass


@pytest.fixture
def avenue():
    """
    A lone 100 m four-lane segment along +x, without junctions.
    """
    return RoadNetwork([RoadSegment(1, [[0.0, 0.0], [100.0, 0.0]], lane_count=4)], {}, [])


def _area(mesh):
    return float(mesh.triangle_areas().sum())


class TestRoadMesh:
    def test_single_segment(self, avenue):
        meshes = generate_road_mesh(avenue)
        assert len(meshes) == 3
        road, *sidewalks = meshes
        assert (road.class_ids == SemanticClass.ROAD.value).all()
        assert _area(road) == pytest.approx(100.0 * 14.0)
        for sidewalk in sidewalks:
            assert (sidewalk.class_ids == SemanticClass.SIDEWALK.value).all()
            assert _area(sidewalk) == pytest.approx(200.0)
            lateral = np.abs(sidewalk.vertices[:, 1])
            assert lateral.min() == pytest.approx(7.0)
            assert lateral.max() == pytest.approx(9.0)

    def test_faces_point_up(self, avenue):
        for mesh in generate_road_mesh(avenue):
            v = mesh.vertices[mesh.triangles]
            normals = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
            assert (normals[:, 2] > 0).all()

    def test_junction_patch(self):
        arms = [[50.0, 0.0], [0.0, 50.0], [-50.0, 0.0], [0.0, -50.0]]
        segments = [RoadSegment(i + 1, [[0.0, 0.0], arm], lane_count=2) for i, arm in enumerate(arms)]
        crossroads = RoadNetwork(segments, {(0.0, 0.0): [1, 2, 3, 4]}, [])
        meshes = generate_road_mesh(crossroads)
        for mesh in meshes:
            mesh.validate()
        patch = meshes[-1]
        assert (patch.class_ids == SemanticClass.ROAD.value).all()
        # the hull of the four road corners is a diamond with half diagonal 3.5
        assert _area(patch) == pytest.approx(2 * 3.5**2)
        v = patch.vertices[patch.triangles]
        assert (np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])[:, 2] > 0).all()

    def test_fixture_roads_are_flat_and_valid(self, fixture_network):
        meshes = generate_road_mesh(fixture_network)
        # a ribbon per segment plus one patch per junction at least
        assert len(meshes) >= len(fixture_network.segments) + len(fixture_network.junctions)
        for mesh in meshes:
            mesh.validate()
            assert np.allclose(mesh.vertices[:, 2], 0.0)


class TestProps:
    def test_spacing_on_straight_segment(self, avenue):
        placed = place_props(avenue, PropPolicy(), seed=1)
        classes = [SemanticClass(int(m.class_ids[0])) for m, _ in placed]
        # floor(100 / 15) lamps and trees on each side, no billboard fits
        assert classes.count(SemanticClass.LAMP_POLE) == 12
        assert classes.count(SemanticClass.TREE) == 12
        assert len(placed) == 24
        for mesh, pose in placed:
            if mesh.class_ids[0] == SemanticClass.LAMP_POLE.value:
                assert abs(pose.position[1]) == pytest.approx(7.5)
            assert 7.0 <= abs(pose.position[1]) <= 9.0

    def test_disabled_policy(self, avenue):
        assert place_props(avenue, PropPolicy.disabled(), seed=1) == []

    def test_scatter_is_deterministic(self, avenue):
        policy = PropPolicy.disabled()
        policy.pedestrian_density = 10.0
        a = [pose for _, pose in place_props(avenue, policy, seed=4)]
        b = [pose for _, pose in place_props(avenue, policy, seed=4)]
        assert a == b

    def test_fixture_junction_props(self, fixture_network):
        policy = PropPolicy.disabled()
        policy.junction_props = True
        classes = {int(m.class_ids[0]) for m, _ in place_props(fixture_network, policy, seed=1)}
        assert classes == {SemanticClass.TRAFFIC_LIGHT.value, SemanticClass.TRAFFIC_SIGN.value}


class TestVehicles:
    @pytest.mark.parametrize("kind", [VehicleKind.CAR, VehicleKind.BUS])
    def test_dimensions(self, kind):
        mesh = vehicle_mesh(kind).with_instance(1)
        mesh.validate()
        lo, hi = mesh.bounds()
        length, width, height = VEHICLE_DIMENSIONS[kind]
        assert np.allclose(hi - lo, [length, width, height])
        assert lo[2] == pytest.approx(0.0)

    def test_truck_fits_its_envelope(self):
        lo, hi = vehicle_mesh(VehicleKind.TRUCK).bounds()
        length, width, height = VEHICLE_DIMENSIONS[VehicleKind.TRUCK]
        assert hi[0] - lo[0] <= length
        assert hi[1] - lo[1] == pytest.approx(width)
        assert hi[2] == pytest.approx(height)

    @pytest.mark.parametrize("kind", list(VehicleKind))
    def test_every_triangle_is_car(self, kind):
        assert (vehicle_mesh(kind).class_ids == SemanticClass.CAR.value).all()


class TestAssemble:
    def test_instance_ids_are_sequential(self, avenue):
        policy = PropPolicy.disabled()
        policy.pedestrian_density = 20.0
        trajectories = [
            Trajectory([[0, -1.75], [100, -1.75]], 20.0, 5.0),
            Trajectory([[0, -5.25], [100, -5.25]], 30.0, 0.0, parked=True),
        ]
        scene = assemble_scene(avenue, None, policy, trajectories, seed=2)
        ids = scene.instance_ids()
        assert ids == list(range(1, len(ids) + 1))
        assert [slot.instance_id for slot in scene.dynamic] == ids[-2:]
        assert [slot.trajectory_id for slot in scene.dynamic] == [0, 1]
        for mesh, _ in scene.static:
            mesh.validate()

    def test_buildings_come_from_rules(self, fixture_network, facade_program):
        policy = PropPolicy.disabled()
        without = assemble_scene(fixture_network, None, policy, [], seed=1)
        with_rules = assemble_scene(fixture_network, facade_program, policy, [], seed=1)
        building = SemanticClass.BUILDING.value
        assert not any((m.class_ids == building).any() for m, _ in without.static)
        assert sum((m.class_ids == building).any() for m, _ in with_rules.static) == 22

    def test_ground_covers_extent(self, fixture_network):
        scene = assemble_scene(fixture_network, None, PropPolicy.disabled(), [], seed=1)
        ground, _ = scene.static[0]
        lo, hi = fixture_network.extent()
        assert (ground.vertices[:, :2].min(axis=0) < lo).all()
        assert (ground.vertices[:, :2].max(axis=0) > hi).all()
        assert math.isclose(float(ground.vertices[0, 2]), -0.05)
