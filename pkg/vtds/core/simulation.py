import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from vtds.core.camera import Camera, CameraRig, RigKind, camera_pose
from vtds.core.dynamics import Trajectory, VehicleCensus, pose_at, populate_vehicles, vehicle_poses
from vtds.core.environment import EnvironmentSchedule, EnvironmentState, environment_at
from vtds.core.geometry import IDENTITY, Mesh, Pose
from vtds.core.ground_truth import AnnotatableInstance, FrameState
from vtds.core.osm_map import LatLon, MapData, RoadNetwork, build_road_network
from vtds.core.renderer import GBuffer, TriangleSoup, apply_weather, rasterize, shade
from vtds.core.scene import DynamicSlot, PropPolicy, SceneGraph, assemble_scene, vehicle_mesh
from vtds.core.semantics import SemanticClass
from vtds.core.shape_grammar import RuleProgram

logger = logging.getLogger(__name__)


@dataclass
class RenderedFrame:
    state: FrameState
    camera: Camera
    environment: EnvironmentState
    gbuffer: GBuffer
    rgb: np.ndarray


class Simulation:
    def __init__(self, seed: int = 0, frame_rate: float = 10.0) -> None:
        """
        Initialize the simulation with its base parameters.

        :param seed: The run seed every random stream derives from.
        :param frame_rate: Capture rate in frames per second.
        """
        if frame_rate <= 0:
            raise ValueError("Frame rate must be positive.")
        self.seed = int(seed)
        self.frame_rate = float(frame_rate)
        self.network: Optional[RoadNetwork] = None
        self.program: Optional[RuleProgram] = None
        self.policy = PropPolicy.disabled()
        self.census: Optional[VehicleCensus] = None
        self.trajectories: List[Trajectory] = []
        self.extra_static: list = []
        self.rig: Optional[CameraRig] = None
        self.schedule = EnvironmentSchedule()
        self.scene: Optional[SceneGraph] = None

    def add_map(self, map_data: MapData, origin: LatLon) -> "Simulation":
        """
        Add a road network built from a parsed OSM extract.

        :param origin: Geodetic origin of the planar frame.
        """
        self.network = build_road_network(map_data, origin)
        return self

    def add_network(self, network: RoadNetwork) -> "Simulation":
        self.network = network
        return self

    def add_rules(self, program: RuleProgram) -> "Simulation":
        self.program = program
        return self

    def add_props(self, policy: PropPolicy) -> "Simulation":
        self.policy = policy
        return self

    def add_vehicles(self, census: VehicleCensus) -> "Simulation":
        """
        Place a vehicle census on the network. Requires ``add_map`` first.
        """
        if self.network is None:
            raise ValueError("Add a map before adding vehicles.")
        self.census = census
        self.trajectories = populate_vehicles(self.network, census, self.seed)
        return self

    def add_trajectories(self, trajectories: List[Trajectory]) -> "Simulation":
        self.trajectories = list(trajectories)
        return self

    def add_static(self, mesh: Mesh, pose: Pose = IDENTITY) -> "Simulation":
        self.extra_static.append((mesh, pose))
        return self

    def add_camera(self, rig: CameraRig) -> "Simulation":
        self.rig = rig
        return self

    def add_environment(self, schedule: EnvironmentSchedule) -> "Simulation":
        self.schedule = schedule
        return self

    def build(self) -> "Simulation":
        """
        Assemble the scene and cache the static geometry.
        """
        if self.rig is None:
            raise ValueError("Add a camera before building the simulation.")
        if self.rig.kind is RigKind.ONBOARD and not 0 <= self.rig.onboard.host < len(self.trajectories):
            raise ValueError(f"Onboard host {self.rig.onboard.host} is not a trajectory index.")
        if self.network is not None:
            self.scene = assemble_scene(self.network, self.program, self.policy, self.trajectories, self.seed)
        else:
            slots = [
                DynamicSlot(vehicle_mesh(tr.kind).with_instance(i + 1), i, i + 1)
                for i, tr in enumerate(self.trajectories)
            ]
            self.scene = SceneGraph([], slots, (np.zeros(2), np.zeros(2)))
        self.scene.static.extend(self.extra_static)
        self.static_soup = TriangleSoup.from_nodes(self.scene.static)
        self.static_instances = [
            AnnotatableInstance(mesh.instance_id, _instance_class(mesh), pose.apply(mesh.box_corners()))
            for mesh, pose in self.scene.static
            if mesh.instance_id > 0
        ]
        ids = self.scene.instance_ids()
        if len(ids) != len(set(ids)):
            raise ValueError("Instance ids must be unique across the scene.")
        logger.info(
            "Built simulation: %d static triangles, %d vehicles.",
            self.static_soup.n_triangles, len(self.scene.dynamic),
        )
        return self

    def time_of(self, index: int) -> float:
        return index / self.frame_rate

    def frame_index_at(self, t: float) -> int:
        return int(math.floor(t * self.frame_rate + 1e-9))

    @property
    def host(self) -> Optional[int]:
        if self.rig is not None and self.rig.kind is RigKind.ONBOARD:
            return self.rig.onboard.host
        return None

    def frame_state(self, index: int) -> FrameState:
        """
        Snapshot of the scene at frame ``index``. The onboard host vehicle is
        left out of its own camera's view.
        """
        t = self.time_of(index)
        nodes = []
        instances = list(self.static_instances)
        poses: Dict[int, Pose] = {}
        for slot in self.scene.dynamic:
            trajectory = self.trajectories[slot.trajectory_id]
            if slot.trajectory_id == self.host or not trajectory.active(t):
                continue
            pose = pose_at(trajectory, t)
            nodes.append((slot.mesh, pose))
            poses[slot.instance_id] = pose
            instances.append(
                AnnotatableInstance(slot.instance_id, SemanticClass.CAR.value, pose.apply(slot.mesh.box_corners()))
            )
        soup = TriangleSoup.concat([self.static_soup, TriangleSoup.from_nodes(nodes)])
        instances.sort(key=lambda inst: inst.instance_id)
        return FrameState(index, t, soup, instances, poses)

    def vehicle_poses(self, t: float) -> Dict[int, Pose]:
        return vehicle_poses(self.trajectories, t)

    def camera_at(self, index: int) -> Camera:
        t = self.time_of(index)
        return camera_pose(self.rig, t, self.vehicle_poses(t))

    def environment_at(self, index: int) -> EnvironmentState:
        return environment_at(self.schedule, self.time_of(index))

    def render(self, index: int, state: Optional[FrameState] = None) -> RenderedFrame:
        """
        Rasterize, shade and apply weather for frame ``index``.
        """
        state = state or self.frame_state(index)
        camera = self.camera_at(index)
        env = self.environment_at(index)
        gbuffer = rasterize(state.soup, camera)
        rgb = apply_weather(shade(gbuffer, env), gbuffer, env, self.seed, index)
        return RenderedFrame(state, camera, env, gbuffer, rgb)

    def get_params(self) -> dict:
        params = {
            "seed": self.seed,
            "frame_rate": self.frame_rate,
            "n_vehicles": len(self.trajectories),
        }
        if self.scene is not None:
            params.update(self.scene.get_params())
        if self.rig is not None:
            params["camera"] = self.rig.get_params()
        return params


def _instance_class(mesh: Mesh) -> int:
    for c in np.unique(mesh.class_ids):
        if SemanticClass(int(c)).annotatable:
            return int(c)
    return SemanticClass.CAR.value
