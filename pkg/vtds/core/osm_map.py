import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from shapely.geometry import Polygon
from shapely.geometry.polygon import orient

from vtds.core.errors import GeometryError, OsmParseError, ReferentialIntegrityError
from vtds.core.geometry import offset_polyline, polyline_arclength

logger = logging.getLogger(__name__)

EARTH_RADIUS = 6378137.0
DEFAULT_LANES = 2
DEFAULT_LANE_WIDTH = 3.5

# Closed ways carrying one of these keys describe a ground region.
REGION_KEYS = ("landuse", "leisure", "natural", "amenity", "area", "place")
VEGETATION_VALUES = {
    "park", "grass", "garden", "wood", "forest", "meadow", "scrub", "village_green",
    "recreation_ground", "pitch",
}

LatLon = Tuple[float, float]


##############
## Raw data ##
##############


@dataclass(frozen=True)
class Way:
    id: int
    refs: Tuple[int, ...]
    tags: Dict[str, str] = field(default_factory=dict, hash=False)

    @property
    def closed(self) -> bool:
        return self.refs[0] == self.refs[-1]


@dataclass
class MapData:
    """
    Nodes and ways of an OSM extract, in document order.
    """

    nodes: Dict[int, LatLon]
    ways: List[Way]
    bounds: Optional[Tuple[float, float, float, float]] = None  # min_lat, min_lon, max_lat, max_lon
    node_tags: Dict[int, Dict[str, str]] = field(default_factory=dict)

    def get_params(self) -> dict:
        return {"n_nodes": len(self.nodes), "n_ways": len(self.ways), "bounds": self.bounds}


def parse_osm(document: str) -> MapData:
    """
    Parse an OSM XML v0.6 document.

    :param document: XML text.
    :return: The parsed MapData; unknown tags are kept verbatim.
    :raises OsmParseError: On malformed XML (with line and column) or bad attributes.
    :raises ReferentialIntegrityError: If a way references a node that is not present.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as err:
        line, column = err.position
        raise OsmParseError(f"Malformed OSM XML: {err.msg}", line, column) from None

    nodes: Dict[int, LatLon] = {}
    node_tags: Dict[int, Dict[str, str]] = {}
    ways: List[Way] = []
    bounds = None
    for child in root:
        if child.tag == "node":
            try:
                node_id = int(child.attrib["id"])
                nodes[node_id] = (float(child.attrib["lat"]), float(child.attrib["lon"]))
            except (KeyError, ValueError) as err:
                raise OsmParseError(f"Node element has a missing or invalid attribute: {err}") from None
            tags = _read_tags(child)
            if tags:
                node_tags[node_id] = tags
        elif child.tag == "way":
            try:
                way_id = int(child.attrib["id"])
                refs = tuple(int(nd.attrib["ref"]) for nd in child if nd.tag == "nd")
            except (KeyError, ValueError) as err:
                raise OsmParseError(f"Way element has a missing or invalid attribute: {err}") from None
            if len(refs) < 2:
                raise OsmParseError(f"Way {way_id} has fewer than 2 node references.")
            ways.append(Way(way_id, refs, _read_tags(child)))
        elif child.tag == "bounds":
            bounds = tuple(
                float(child.attrib[k]) for k in ("minlat", "minlon", "maxlat", "maxlon")
            )

    for way in ways:
        for ref in way.refs:
            if ref not in nodes:
                raise ReferentialIntegrityError(way.id, ref)

    if bounds is None and nodes:
        lat_lon = np.array(list(nodes.values()))
        bounds = (
            float(lat_lon[:, 0].min()),
            float(lat_lon[:, 1].min()),
            float(lat_lon[:, 0].max()),
            float(lat_lon[:, 1].max()),
        )
    return MapData(nodes, ways, bounds, node_tags)


def _read_tags(element: ET.Element) -> Dict[str, str]:
    return {t.attrib["k"]: t.attrib["v"] for t in element if t.tag == "tag"}


def serialize_osm(map_data: MapData) -> str:
    """
    Write MapData back to OSM XML; ``parse_osm`` of the result reproduces it.
    """
    root = ET.Element("osm", {"version": "0.6", "generator": "vtds"})
    if map_data.bounds is not None:
        min_lat, min_lon, max_lat, max_lon = map_data.bounds
        ET.SubElement(
            root,
            "bounds",
            {
                "minlat": repr(min_lat),
                "minlon": repr(min_lon),
                "maxlat": repr(max_lat),
                "maxlon": repr(max_lon),
            },
        )
    for node_id, (lat, lon) in map_data.nodes.items():
        node = ET.SubElement(root, "node", {"id": str(node_id), "lat": repr(lat), "lon": repr(lon)})
        for k, v in map_data.node_tags.get(node_id, {}).items():
            ET.SubElement(node, "tag", {"k": k, "v": v})
    for way in map_data.ways:
        element = ET.SubElement(root, "way", {"id": str(way.id)})
        for ref in way.refs:
            ET.SubElement(element, "nd", {"ref": str(ref)})
        for k, v in way.tags.items():
            ET.SubElement(element, "tag", {"k": k, "v": v})
    return ET.tostring(root, encoding="unicode")


################
## Projection ##
################


def project_geodetic(lat: float, lon: float, origin: LatLon) -> Tuple[float, float]:
    """
    Equirectangular projection onto the local tangent plane at ``origin``.

    :return: (x meters east, y meters north).
    """
    lat0, lon0 = origin
    x = EARTH_RADIUS * math.cos(math.radians(lat0)) * math.radians(lon - lon0)
    y = EARTH_RADIUS * math.radians(lat - lat0)
    return x, y


def unproject_planar(x: float, y: float, origin: LatLon) -> LatLon:
    lat0, lon0 = origin
    lat = lat0 + math.degrees(y / EARTH_RADIUS)
    lon = lon0 + math.degrees(x / (EARTH_RADIUS * math.cos(math.radians(lat0))))
    return lat, lon


def haversine(a: LatLon, b: LatLon) -> float:
    """
    Great-circle distance in meters on a sphere of radius ``EARTH_RADIUS``.
    """
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS * math.asin(math.sqrt(h))


##################
## Road network ##
##################


class Direction(Enum):
    ONE_WAY = "one-way"
    TWO_WAY = "two-way"


@dataclass
class RoadSegment:
    id: int
    centerline: np.ndarray
    lane_count: int = DEFAULT_LANES
    lane_width: float = DEFAULT_LANE_WIDTH
    direction: Direction = Direction.TWO_WAY
    name: Optional[str] = None
    speed_limit: Optional[float] = None
    start_node: Optional[int] = None
    end_node: Optional[int] = None

    def __post_init__(self):
        self.centerline = np.asarray(self.centerline, dtype=np.float64).reshape(-1, 2)
        if self.lane_count < 1:
            raise ValueError(f"Segment {self.id}: lane_count must be >= 1.")
        if self.lane_width <= 0:
            raise ValueError(f"Segment {self.id}: lane_width must be positive.")

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    @property
    def length(self) -> float:
        return float(polyline_arclength(self.centerline)[-1])


@dataclass
class Footprint:
    way_id: int
    polygon: np.ndarray
    tags: Dict[str, str]

    @property
    def kind(self) -> str:
        """
        "building", "vegetation", "parking" or "ground".
        """
        if "building" in self.tags:
            return "building"
        if any(self.tags.get(k) in VEGETATION_VALUES for k in REGION_KEYS):
            return "vegetation"
        if self.tags.get("amenity") == "parking":
            return "parking"
        return "ground"


@dataclass
class BuildReport:
    n_ways: int = 0
    n_segments: int = 0
    n_footprints: int = 0
    skipped: List[int] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


@dataclass
class RoadNetwork:
    segments: List[RoadSegment]
    junctions: Dict[Tuple[float, float], List[int]]
    footprints: List[Footprint]
    report: BuildReport = field(default_factory=BuildReport)

    def segment(self, segment_id: int) -> RoadSegment:
        for seg in self.segments:
            if seg.id == segment_id:
                return seg
        raise KeyError(f"No segment with id {segment_id}.")

    def extent(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Planar bounding box (min xy, max xy) of all segments and footprints.
        """
        pts = [s.centerline for s in self.segments] + [f.polygon for f in self.footprints]
        if not pts:
            return np.zeros(2), np.zeros(2)
        stacked = np.vstack(pts)
        return stacked.min(axis=0), stacked.max(axis=0)


def _parse_lanes(tags: Dict[str, str]) -> int:
    try:
        lanes = int(float(tags.get("lanes", DEFAULT_LANES)))
    except ValueError:
        return DEFAULT_LANES
    return lanes if lanes >= 1 else DEFAULT_LANES


def _parse_width(tags: Dict[str, str], lanes: int) -> float:
    raw = tags.get("width")
    if raw is None:
        return DEFAULT_LANE_WIDTH
    try:
        width = float(raw.replace("m", "").strip())
    except ValueError:
        return DEFAULT_LANE_WIDTH
    return width / lanes if width > 0 else DEFAULT_LANE_WIDTH


def _parse_speed(tags: Dict[str, str]) -> Optional[float]:
    """
    ``maxspeed`` in m/s; bare numbers are km/h, an "mph" suffix is honoured.
    """
    raw = tags.get("maxspeed")
    if raw is None:
        return None
    raw = raw.strip().lower()
    try:
        if raw.endswith("mph"):
            return float(raw[:-3]) * 0.44704
        return float(raw.replace("km/h", "").strip()) / 3.6
    except ValueError:
        return None


def _distinct_points(points: np.ndarray) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-9
    return points[keep]


def build_road_network(map_data: MapData, origin: LatLon) -> RoadNetwork:
    """
    Classify ways into road segments, footprints and skipped ways.

    Open ways with a ``highway`` tag become segments, closed ways with a
    ``building`` tag or a region key become footprints, anything else is
    skipped and listed in ``network.report``. Endpoint nodes shared by at least
    two segments become junctions.
    """
    planar = {
        node_id: project_geodetic(lat, lon, origin) for node_id, (lat, lon) in map_data.nodes.items()
    }
    report = BuildReport(n_ways=len(map_data.ways))
    segments: List[RoadSegment] = []
    footprints: List[Footprint] = []

    for way in map_data.ways:
        points = np.array([planar[r] for r in way.refs], dtype=np.float64)
        if not way.closed and "highway" in way.tags:
            segment = _make_segment(way, points)
            if segment is None:
                report.skipped.append(way.id)
                continue
            segments.append(segment)
        elif way.closed and ("building" in way.tags or any(k in way.tags for k in REGION_KEYS)):
            polygon = Polygon(points) if len(set(way.refs)) >= 3 else None
            if polygon is None or not polygon.is_valid or polygon.area <= 0:
                logger.debug("Skipping way %d: footprint is not a simple polygon.", way.id)
                report.skipped.append(way.id)
                continue
            ccw = np.asarray(orient(polygon, sign=1.0).exterior.coords)[:-1]
            footprints.append(Footprint(way.id, ccw, dict(way.tags)))
        else:
            report.skipped.append(way.id)

    report.n_segments = len(segments)
    report.n_footprints = len(footprints)
    if report.skipped:
        logger.info("Skipped %d unclassifiable way(s).", report.n_skipped)

    incident: Dict[int, List[int]] = {}
    for seg in segments:
        for node in {seg.start_node, seg.end_node}:
            incident.setdefault(node, []).append(seg.id)
    junctions = {
        tuple(float(c) for c in planar[node]): ids
        for node, ids in sorted(incident.items())
        if len(ids) >= 2
    }
    return RoadNetwork(segments, junctions, footprints, report)


def _make_segment(way: Way, points: np.ndarray) -> Optional[RoadSegment]:
    tags = way.tags
    refs = list(way.refs)
    if tags.get("oneway") == "-1":
        points = points[::-1]
        refs = refs[::-1]
    centerline = _distinct_points(points)
    if len(centerline) < 2:
        logger.debug("Skipping way %d: zero-length centerline.", way.id)
        return None
    lanes = _parse_lanes(tags)
    oneway = tags.get("oneway") in ("yes", "true", "1", "-1")
    return RoadSegment(
        id=way.id,
        centerline=centerline,
        lane_count=lanes,
        lane_width=_parse_width(tags, lanes),
        direction=Direction.ONE_WAY if oneway else Direction.TWO_WAY,
        name=tags.get("name"),
        speed_limit=_parse_speed(tags),
        start_node=refs[0],
        end_node=refs[-1],
    )


def lane_centerlines(segment: RoadSegment) -> List[np.ndarray]:
    """
    Lane centerlines ordered left-to-right in the travel direction of the
    centerline; lane ``i`` is offset by ``(i - (lane_count - 1) / 2) * lane_width``
    to the right.

    :raises GeometryError: If the centerline has zero length.
    """
    if len(segment.centerline) < 2 or segment.length <= 0:
        raise GeometryError(f"Segment {segment.id} has a degenerate centerline.")
    half = (segment.lane_count - 1) / 2.0
    return [
        offset_polyline(segment.centerline, (i - half) * segment.lane_width)
        for i in range(segment.lane_count)
    ]
