import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from shapely.geometry import MultiPoint
from shapely.geometry.polygon import orient

from vtds.core.geometry import (
    IDENTITY,
    Mesh,
    Pose,
    box,
    cone,
    cylinder,
    flat_polygon,
    offset_polyline,
    point_at,
    polyline_arclength,
    rectangle,
    ribbon,
)
from vtds.core.osm_map import RoadNetwork, RoadSegment
from vtds.core.rng import keyed_generator
from vtds.core.semantics import SemanticClass
from vtds.core.shape_grammar import RuleProgram, apply_rules

logger = logging.getLogger(__name__)

SIDEWALK_WIDTH = 2.0
ROAD_ALBEDO = (0.32, 0.32, 0.34)
SIDEWALK_ALBEDO = (0.62, 0.6, 0.56)
GRASS_ALBEDO = (0.33, 0.45, 0.22)
GROUND_MARGIN = 150.0
GROUND_Z = -0.05
REGION_Z = -0.02


################
## Road meshes ##
################


def _junction_clearance(network: RoadNetwork) -> Dict[Tuple[float, float], float]:
    widths = {seg.id: seg.width for seg in network.segments}
    return {
        point: max(widths[i] for i in ids) / 2.0 + SIDEWALK_WIDTH
        for point, ids in network.junctions.items()
    }


def sidewalk_span(segment: RoadSegment, network: RoadNetwork) -> Tuple[float, float]:
    """
    Arc-length interval of a segment that carries sidewalks; the ends are
    trimmed back from junctions so sidewalks do not cross other roads.
    """
    clearance = _junction_clearance(network)
    start = tuple(float(c) for c in segment.centerline[0])
    end = tuple(float(c) for c in segment.centerline[-1])
    return clearance.get(start, 0.0), segment.length - clearance.get(end, 0.0)


def _sub_polyline(points: np.ndarray, s0: float, s1: float) -> np.ndarray:
    arc = polyline_arclength(points)
    inner = points[(arc > s0) & (arc < s1)]
    first, _ = point_at(points, s0)
    last, _ = point_at(points, s1)
    return np.vstack([first, inner, last])


def generate_road_mesh(network: RoadNetwork) -> List[Mesh]:
    """
    One road ribbon per segment (width ``lane_count * lane_width``), two
    sidewalk ribbons of ``SIDEWALK_WIDTH`` flanking it, and a filled road
    polygon per junction; everything lies at z = 0.
    """
    meshes: List[Mesh] = []
    for seg in network.segments:
        half = seg.width / 2.0
        left = offset_polyline(seg.centerline, -half)
        right = offset_polyline(seg.centerline, half)
        meshes.append(ribbon(left, right, 0.0, SemanticClass.ROAD, ROAD_ALBEDO))

        s0, s1 = sidewalk_span(seg, network)
        if s1 - s0 <= 1e-6:
            continue
        line = _sub_polyline(seg.centerline, s0, s1)
        outer = half + SIDEWALK_WIDTH
        meshes.append(
            ribbon(offset_polyline(line, -outer), offset_polyline(line, -half), 0.0,
                   SemanticClass.SIDEWALK, SIDEWALK_ALBEDO)
        )
        meshes.append(
            ribbon(offset_polyline(line, half), offset_polyline(line, outer), 0.0,
                   SemanticClass.SIDEWALK, SIDEWALK_ALBEDO)
        )

    for point, ids in network.junctions.items():
        corners = []
        for seg_id in ids:
            seg = network.segment(seg_id)
            at_start = np.allclose(seg.centerline[0], point)
            end_line = seg.centerline if at_start else seg.centerline[::-1]
            half = seg.width / 2.0
            corners.extend(offset_polyline(end_line[:2], -half)[:1])
            corners.extend(offset_polyline(end_line[:2], half)[:1])
        hull = MultiPoint([tuple(c) for c in corners]).convex_hull
        if hull.geom_type == "Polygon":
            ring = np.asarray(orient(hull, sign=1.0).exterior.coords)
            meshes.append(flat_polygon(ring, 0.0, SemanticClass.ROAD, ROAD_ALBEDO))
    return [m for m in meshes if m.n_triangles]


##########
## Props ##
##########


def lamp_pole_mesh() -> Mesh:
    return Mesh.merge(
        [
            cylinder((0, 0), 0.1, 0.0, 6.0, SemanticClass.LAMP_POLE, (0.35, 0.35, 0.38), segments=6),
            box((0.4, 0), (1.0, 0.25, 0.15), 5.85, SemanticClass.LAMP_POLE, (0.8, 0.8, 0.7)),
        ]
    )


def tree_mesh() -> Mesh:
    return Mesh.merge(
        [
            cylinder((0, 0), 0.15, 0.0, 2.2, SemanticClass.TREE, (0.36, 0.25, 0.15), segments=6),
            cone((0, 0), 1.4, 1.8, 4.0, SemanticClass.TREE, (0.16, 0.42, 0.14), segments=8),
        ]
    )


def traffic_light_mesh() -> Mesh:
    return Mesh.merge(
        [
            cylinder((0, 0), 0.09, 0.0, 3.0, SemanticClass.TRAFFIC_LIGHT, (0.25, 0.25, 0.25), segments=6),
            box((0, 0), (0.35, 0.35, 1.0), 3.0, SemanticClass.TRAFFIC_LIGHT, (0.12, 0.12, 0.1)),
        ]
    )


def traffic_sign_mesh() -> Mesh:
    return Mesh.merge(
        [
            cylinder((0, 0), 0.05, 0.0, 2.2, SemanticClass.TRAFFIC_SIGN, (0.5, 0.5, 0.5), segments=6),
            box((0, 0), (0.06, 0.7, 0.7), 2.2, SemanticClass.TRAFFIC_SIGN, (0.1, 0.3, 0.75)),
        ]
    )


def billboard_mesh() -> Mesh:
    return Mesh.merge(
        [
            box((0, -1.5), (0.2, 0.2, 3.0), 0.0, SemanticClass.BILLBOARD, (0.3, 0.3, 0.3)),
            box((0, 1.5), (0.2, 0.2, 3.0), 0.0, SemanticClass.BILLBOARD, (0.3, 0.3, 0.3)),
            box((0, 0), (0.3, 4.0, 2.0), 3.0, SemanticClass.BILLBOARD, (0.85, 0.75, 0.2)),
        ]
    )


def fence_mesh(length: float) -> Mesh:
    return box((0, 0), (length, 0.06, 1.1), 0.0, SemanticClass.FENCE, (0.55, 0.5, 0.45))


def chair_mesh() -> Mesh:
    return Mesh.merge(
        [
            box((0, 0), (0.5, 0.5, 0.45), 0.0, SemanticClass.CHAIR, (0.45, 0.3, 0.2)),
            box((-0.22, 0), (0.06, 0.5, 0.5), 0.45, SemanticClass.CHAIR, (0.45, 0.3, 0.2)),
        ]
    )


def pedestrian_mesh() -> Mesh:
    return Mesh.merge(
        [
            box((0, 0), (0.3, 0.45, 0.85), 0.0, SemanticClass.PEDESTRIAN, (0.2, 0.2, 0.3)),
            box((0, 0), (0.3, 0.5, 0.6), 0.85, SemanticClass.PEDESTRIAN, (0.6, 0.15, 0.15)),
            box((0, 0), (0.22, 0.22, 0.25), 1.45, SemanticClass.PEDESTRIAN, (0.85, 0.7, 0.55)),
        ]
    )


def cyclist_mesh() -> Mesh:
    return Mesh.merge(
        [
            box((0, 0), (1.7, 0.12, 0.7), 0.2, SemanticClass.CYCLIST, (0.1, 0.1, 0.1)),
            box((0, 0), (0.35, 0.45, 0.75), 0.9, SemanticClass.CYCLIST, (0.15, 0.35, 0.6)),
            box((0, 0), (0.22, 0.22, 0.25), 1.65, SemanticClass.CYCLIST, (0.85, 0.7, 0.55)),
        ]
    )


@dataclass
class PropPolicy:
    """
    Placement policy for street furniture. Spacings are meters along the
    sidewalk; ``math.inf`` disables a prop type. Densities are expected counts
    per 100 m of sidewalk side.
    """

    lamp_spacing: float = 15.0
    tree_spacing: float = 15.0
    billboard_spacing: float = 120.0
    fence_spacing: float = math.inf
    fence_length: float = 6.0
    junction_props: bool = True
    pedestrian_density: float = 0.0
    cyclist_density: float = 0.0
    chair_density: float = 0.0

    @classmethod
    def disabled(cls) -> "PropPolicy":
        return cls(
            lamp_spacing=math.inf,
            tree_spacing=math.inf,
            billboard_spacing=math.inf,
            fence_spacing=math.inf,
            junction_props=False,
        )


def _along(count_spacing: float, start: float, stop: float, phase: float) -> np.ndarray:
    length = stop - start
    if not math.isfinite(count_spacing) or count_spacing <= 0 or length <= 0:
        return np.zeros(0)
    count = int(np.floor(length / count_spacing))
    return start + count_spacing * (np.arange(count) + phase)


def place_props(
    network: RoadNetwork, policy: PropPolicy, seed: int
) -> List[Tuple[Mesh, Pose]]:
    """
    Lamp poles and trees along both sidewalks at the policy spacing, billboards
    and fences further apart, traffic lights and signs at junction corners, and
    optional static pedestrians, cyclists and chairs scattered on sidewalks.

    Placement is deterministic in ``seed``: each segment draws from its own
    keyed random stream.
    """
    templates = {
        "lamp": lamp_pole_mesh(),
        "tree": tree_mesh(),
        "billboard": billboard_mesh(),
        "fence": fence_mesh(policy.fence_length),
        "pedestrian": pedestrian_mesh(),
        "cyclist": cyclist_mesh(),
        "chair": chair_mesh(),
        "light": traffic_light_mesh(),
        "sign": traffic_sign_mesh(),
    }
    placed: List[Tuple[Mesh, Pose]] = []

    for index, seg in enumerate(network.segments):
        rng = keyed_generator(seed, "props", index)
        s0, s1 = sidewalk_span(seg, network)
        for side in (-1.0, 1.0):
            curb = seg.width / 2.0 + 0.5
            middle = seg.width / 2.0 + SIDEWALK_WIDTH / 2.0
            back = seg.width / 2.0 + SIDEWALK_WIDTH - 0.2
            line_curb = offset_polyline(seg.centerline, side * curb)
            line_middle = offset_polyline(seg.centerline, side * middle)
            line_back = offset_polyline(seg.centerline, side * back)
            facing = 0.0 if side > 0 else math.pi

            for s in _along(policy.lamp_spacing, s0, s1, 0.5):
                placed.append((templates["lamp"], _pose_on(line_curb, s, facing + math.pi / 2 * side)))
            # trees sit between lamps
            for s in _along(policy.tree_spacing, s0, s1, 0.0):
                placed.append((templates["tree"], _pose_on(line_middle, s, 0.0)))
            for s in _along(policy.billboard_spacing, s0, s1, 0.5):
                placed.append((templates["billboard"], _pose_on(line_back, s, 0.0)))
            for s in _along(policy.fence_spacing, s0, s1, 0.5):
                placed.append((templates["fence"], _pose_on(line_back, s, 0.0)))

            span = max(s1 - s0, 0.0)
            for kind, density in (
                ("pedestrian", policy.pedestrian_density),
                ("cyclist", policy.cyclist_density),
                ("chair", policy.chair_density),
            ):
                if density <= 0 or span <= 0:
                    continue
                count = int(rng.poisson(density * span / 100.0))
                for s in np.sort(rng.uniform(s0, s1, size=count)):
                    yaw = float(rng.uniform(0.0, 2.0 * math.pi))
                    placed.append((templates[kind], _pose_on(line_middle, s, yaw, absolute_yaw=True)))

    if policy.junction_props:
        for point, ids in network.junctions.items():
            for k, seg_id in enumerate(ids):
                seg = network.segment(seg_id)
                at_start = np.allclose(seg.centerline[0], point)
                line = seg.centerline if at_start else seg.centerline[::-1]
                corner_s = seg.width / 2.0 + SIDEWALK_WIDTH + 0.5
                if corner_s >= seg.length:
                    continue
                offset = seg.width / 2.0 + SIDEWALK_WIDTH / 2.0
                curb_line = offset_polyline(line, offset)
                placed.append((templates["light"], _pose_on(curb_line, corner_s, math.pi)))
                if k == 0:
                    sign_line = offset_polyline(line, -offset)
                    placed.append((templates["sign"], _pose_on(sign_line, corner_s, math.pi)))
    return placed


def _pose_on(line: np.ndarray, s: float, yaw: float, absolute_yaw: bool = False) -> Pose:
    point, tangent = point_at(line, s)
    heading = math.atan2(tangent[1], tangent[0])
    return Pose((float(point[0]), float(point[1]), 0.0), yaw if absolute_yaw else heading + yaw)


######################
## Vehicle archetypes ##
######################


class VehicleKind(Enum):
    CAR = "car"
    BUS = "bus"
    TRUCK = "truck"


# length, width, height in meters
VEHICLE_DIMENSIONS = {
    VehicleKind.CAR: (4.5, 1.8, 1.5),
    VehicleKind.BUS: (12.0, 2.5, 3.2),
    VehicleKind.TRUCK: (8.0, 2.5, 3.5),
}

BODY_COLORS = (
    (0.75, 0.1, 0.1),
    (0.1, 0.2, 0.6),
    (0.85, 0.85, 0.85),
    (0.15, 0.15, 0.15),
    (0.6, 0.6, 0.62),
    (0.9, 0.75, 0.1),
    (0.2, 0.45, 0.25),
)


def vehicle_mesh(kind: VehicleKind, body_color=(0.6, 0.6, 0.62)) -> Mesh:
    """
    Box-compound vehicle in its local frame: +x forward, centered on the
    origin, wheels resting on z = 0. Every triangle is class car.
    """
    length, width, height = VEHICLE_DIMENSIONS[kind]
    car = SemanticClass.CAR
    glass = (0.12, 0.14, 0.18)
    tyre = (0.05, 0.05, 0.05)
    wheel = 0.35 if kind is VehicleKind.CAR else 0.5
    parts = []
    for x in (-0.32 * length, 0.32 * length):
        for y in (-0.5 * width + 0.15, 0.5 * width - 0.15):
            parts.append(box((x, y), (2 * wheel, 0.28, 2 * wheel), 0.0, car, tyre))
    if kind is VehicleKind.CAR:
        parts.append(box((0, 0), (length, width, 0.65), 0.3, car, body_color))
        parts.append(box((-0.1 * length, 0), (0.5 * length, 0.9 * width, height - 0.95), 0.95, car, glass))
    elif kind is VehicleKind.BUS:
        parts.append(box((0, 0), (length, width, height - 0.35), 0.35, car, body_color))
    else:
        cab = 0.22 * length
        parts.append(box((0.5 * length - cab / 2, 0), (cab, width, height - 1.2), 0.5, car, body_color))
        parts.append(box((-cab / 2, 0), (length - cab - 0.2, width, height - 0.5), 0.5, car, (0.8, 0.8, 0.78)))
    return Mesh.merge(parts)


#################
## Scene graph ##
#################


@dataclass
class DynamicSlot:
    mesh: Mesh
    trajectory_id: int
    instance_id: int


@dataclass
class SceneGraph:
    static: List[Tuple[Mesh, Pose]]
    dynamic: List[DynamicSlot]
    ground_extent: Tuple[np.ndarray, np.ndarray]

    def instance_ids(self) -> List[int]:
        ids = [m.instance_id for m, _ in self.static if m.instance_id > 0]
        return ids + [slot.instance_id for slot in self.dynamic]

    def get_params(self) -> dict:
        return {
            "n_static": len(self.static),
            "n_dynamic": len(self.dynamic),
            "n_triangles": int(sum(m.n_triangles for m, _ in self.static)),
        }


def ground_meshes(network: RoadNetwork) -> List[Mesh]:
    """
    A grass ground plane under the whole extract plus flat regions for closed
    ways that are not buildings.
    """
    lo, hi = network.extent()
    lo, hi = lo - GROUND_MARGIN, hi + GROUND_MARGIN
    plane = np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    meshes = [flat_polygon(plane, GROUND_Z, SemanticClass.VEGETATION, GRASS_ALBEDO)]
    for footprint in network.footprints:
        kind = footprint.kind
        if kind == "building":
            continue
        if kind == "vegetation":
            semantic, color = SemanticClass.VEGETATION, (0.28, 0.5, 0.2)
        elif kind == "parking":
            semantic, color = SemanticClass.ROAD, (0.4, 0.4, 0.42)
        else:
            semantic, color = SemanticClass.SIDEWALK, (0.58, 0.56, 0.5)
        meshes.append(flat_polygon(footprint.polygon, REGION_Z, semantic, color))
    return [m for m in meshes if m.n_triangles]


def assemble_scene(
    network: RoadNetwork,
    program: Optional[RuleProgram],
    policy: PropPolicy,
    trajectories: list,
    seed: int,
) -> SceneGraph:
    """
    Build the full scene: ground, roads, grammar buildings, props and one
    dynamic slot per trajectory. Instance ids are assigned here, in a single
    pass: static annotatable props first (placement order), then vehicles in
    trajectory order.
    """
    static: List[Tuple[Mesh, Pose]] = [(m, IDENTITY) for m in ground_meshes(network)]
    static += [(m, IDENTITY) for m in generate_road_mesh(network)]
    if program is not None:
        for footprint in network.footprints:
            if footprint.kind == "building":
                mesh = apply_rules(program, footprint, seed)
                if mesh.n_triangles:
                    static.append((mesh, IDENTITY))

    next_id = 1
    for mesh, pose in place_props(network, policy, seed):
        if any(SemanticClass(int(c)).annotatable for c in np.unique(mesh.class_ids)):
            mesh = mesh.with_instance(next_id)
            next_id += 1
        static.append((mesh, pose))

    dynamic = []
    for trajectory_id, trajectory in enumerate(trajectories):
        rng = keyed_generator(seed, "paint", trajectory_id)
        color = BODY_COLORS[int(rng.integers(len(BODY_COLORS)))]
        mesh = vehicle_mesh(trajectory.kind, color).with_instance(next_id)
        dynamic.append(DynamicSlot(mesh, trajectory_id, next_id))
        next_id += 1

    logger.info(
        "Scene assembled: %d static nodes, %d vehicles, %d annotatable instances.",
        len(static), len(dynamic), next_id - 1,
    )
    return SceneGraph(static, dynamic, network.extent())
