import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from vtds.core.errors import CapacityError, InactiveError
from vtds.core.geometry import Pose, point_at, polyline_arclength
from vtds.core.osm_map import Direction, RoadNetwork, RoadSegment, lane_centerlines
from vtds.core.rng import keyed_generator
from vtds.core.scene import VehicleKind

logger = logging.getLogger(__name__)

PARKING_PITCH = 14.0
MOVING_PITCH = 20.0
END_MARGIN = 10.0
DEFAULT_SPEED = 10.0


@dataclass
class Trajectory:
    """
    Constant-speed motion along a lane polyline. The vehicle is active on
    ``[start_time, end_time]`` and stops at the end of its path.
    """

    path: np.ndarray
    start_offset: float = 0.0
    speed: float = 0.0
    start_time: float = 0.0
    end_time: float = math.inf
    kind: VehicleKind = VehicleKind.CAR
    parked: bool = False
    segment_id: Optional[int] = None
    lane: Optional[int] = None

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=np.float64).reshape(-1, 2)
        if self.speed < 0:
            raise ValueError("Trajectory speed must be non-negative.")
        if self.parked and self.speed != 0:
            raise ValueError("A parked trajectory must have zero speed.")
        if len(self.path) < 2 or self.length <= 0:
            raise ValueError("Trajectory path must have positive arc length.")
        if self.end_time < self.start_time:
            raise ValueError("Trajectory end_time precedes start_time.")

    @property
    def length(self) -> float:
        return float(polyline_arclength(self.path)[-1])

    def active(self, t: float) -> bool:
        return self.start_time <= t <= self.end_time

    def arc_position(self, t: float) -> float:
        return min(self.start_offset + self.speed * (t - self.start_time), self.length)


def pose_at(trajectory: Trajectory, t: float) -> Pose:
    """
    Pose of the vehicle at time ``t``: the point ``start_offset + speed * (t -
    start_time)`` along the path, clamped to the path end, heading along the
    path tangent.

    :raises InactiveError: If ``t`` lies outside the active interval.
    """
    if not trajectory.active(t):
        raise InactiveError(
            f"Trajectory is inactive at t={t} "
            f"(active on [{trajectory.start_time}, {trajectory.end_time}])."
        )
    point, tangent = point_at(trajectory.path, trajectory.arc_position(t))
    return Pose((float(point[0]), float(point[1]), 0.0), math.atan2(tangent[1], tangent[0]))


def vehicle_poses(trajectories: List[Trajectory], t: float) -> Dict[int, Pose]:
    """
    Poses of every trajectory active at ``t``, keyed by trajectory index.
    """
    return {i: pose_at(tr, t) for i, tr in enumerate(trajectories) if tr.active(t)}


@dataclass
class VehicleCensus:
    """
    How many vehicles of each kind to park along curbs and to drive along lanes.
    """

    parked: Dict[VehicleKind, int] = field(default_factory=dict)
    moving: Dict[VehicleKind, int] = field(default_factory=dict)
    speed: float = DEFAULT_SPEED
    speed_spread: float = 0.0

    def __post_init__(self):
        self.parked = _kind_counts(self.parked)
        self.moving = _kind_counts(self.moving)
        if self.speed < 0 or self.speed_spread < 0 or self.speed_spread > self.speed:
            raise ValueError("Census speeds must satisfy 0 <= speed_spread <= speed.")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "VehicleCensus":
        return cls(
            parked=data.get("parked", {}),
            moving=data.get("moving", {}),
            speed=float(data.get("speed", DEFAULT_SPEED)),
            speed_spread=float(data.get("speed_spread", 0.0)),
        )

    @property
    def n_parked(self) -> int:
        return sum(self.parked.values())

    @property
    def n_moving(self) -> int:
        return sum(self.moving.values())

    @property
    def total(self) -> int:
        return self.n_parked + self.n_moving

    def get_params(self) -> dict:
        return {
            "parked": {k.value: v for k, v in self.parked.items()},
            "moving": {k.value: v for k, v in self.moving.items()},
            "speed": self.speed,
            "speed_spread": self.speed_spread,
        }


def _kind_counts(counts: Mapping) -> Dict[VehicleKind, int]:
    result = {}
    for key, value in counts.items():
        kind = key if isinstance(key, VehicleKind) else VehicleKind(str(key))
        if int(value) < 0:
            raise ValueError(f"Census count for {kind.value} must be >= 0, got {value}.")
        result[kind] = int(value)
    return result


def _lane_paths(segment: RoadSegment) -> List[Tuple[int, np.ndarray]]:
    """
    (lane index, path in travel direction) for every lane of a segment.
    Two-way segments drive on the right: lanes ``i >= lane_count // 2`` follow
    the centerline, the others run against it.
    """
    lanes = lane_centerlines(segment)
    paths = []
    for i, line in enumerate(lanes):
        forward = segment.direction is Direction.ONE_WAY or i >= segment.lane_count // 2
        paths.append((i, line if forward else line[::-1].copy()))
    return paths


def _slots(length: float, pitch: float) -> np.ndarray:
    usable = length - 2 * END_MARGIN
    if usable < 0:
        return np.zeros(0)
    return END_MARGIN + pitch * np.arange(int(np.floor(usable / pitch)) + 1)


def parking_slots(network: RoadNetwork) -> List[Tuple[int, int, np.ndarray, float]]:
    """
    Curbside slots as (segment id, lane, path, arc offset), in network order.
    Only segments with three or more lanes have curb parking, so parked and
    moving vehicles never share a lane.
    """
    slots = []
    for seg in network.segments:
        if seg.lane_count < 3:
            continue
        paths = _lane_paths(seg)
        curb = {0, seg.lane_count - 1}
        for lane, path in paths:
            if lane not in curb:
                continue
            for s in _slots(float(polyline_arclength(path)[-1]), PARKING_PITCH):
                slots.append((seg.id, lane, path, float(s)))
    return slots


def moving_slots(network: RoadNetwork) -> List[Tuple[int, int, np.ndarray, float]]:
    """
    Start slots for moving vehicles. Segments with three or more lanes keep
    the curb lanes free for parking.
    """
    slots = []
    for seg in network.segments:
        inner_only = seg.lane_count >= 3
        for lane, path in _lane_paths(seg):
            if inner_only and lane in (0, seg.lane_count - 1):
                continue
            for s in _slots(float(polyline_arclength(path)[-1]), MOVING_PITCH):
                slots.append((seg.id, lane, path, float(s)))
    return slots


def _ordered_kinds(counts: Dict[VehicleKind, int]) -> List[VehicleKind]:
    kinds = []
    for kind in VehicleKind:
        kinds.extend([kind] * counts.get(kind, 0))
    return kinds


def populate_vehicles(network: RoadNetwork, census: VehicleCensus, seed: int) -> List[Trajectory]:
    """
    Place the census on the network. Moving vehicles come first in the result,
    then parked ones; slots are drawn without replacement from keyed random
    permutations so two vehicles never share a slot.

    :raises CapacityError: If the network does not have enough curb or lane slots.
    """
    trajectories: List[Trajectory] = []

    if census.n_moving:
        slots = moving_slots(network)
        if census.n_moving > len(slots):
            raise CapacityError("moving", census.n_moving, len(slots))
        rng = keyed_generator(seed, "vehicles", "moving")
        order = rng.permutation(len(slots))[: census.n_moving]
        for kind, index in zip(_ordered_kinds(census.moving), order):
            seg_id, lane, path, s = slots[int(index)]
            speed = census.speed
            if census.speed_spread > 0:
                speed += float(rng.uniform(-census.speed_spread, census.speed_spread))
            trajectories.append(
                Trajectory(path, s, speed, kind=kind, segment_id=seg_id, lane=lane)
            )

    if census.n_parked:
        slots = parking_slots(network)
        if census.n_parked > len(slots):
            raise CapacityError("parked", census.n_parked, len(slots))
        rng = keyed_generator(seed, "vehicles", "parked")
        order = rng.permutation(len(slots))[: census.n_parked]
        for kind, index in zip(_ordered_kinds(census.parked), order):
            seg_id, lane, path, s = slots[int(index)]
            trajectories.append(
                Trajectory(path, s, 0.0, kind=kind, parked=True, segment_id=seg_id, lane=lane)
            )

    logger.info(
        "Populated %d moving and %d parked vehicles.", census.n_moving, census.n_parked
    )
    return trajectories
