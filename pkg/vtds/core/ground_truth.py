import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import cv2
import numpy as np

from vtds.core.camera import Camera
from vtds.core.geometry import Pose
from vtds.core.renderer import GBuffer, TriangleSoup, solo_pixel_counts
from vtds.core.semantics import SemanticClass, palette_array

logger = logging.getLogger(__name__)

MIN_BOX_WIDTH = 15.0
MIN_BOX_HEIGHT = 10.0
OCCLUSION_THRESHOLD = 0.75
TEXTURE_THRESHOLD = 0.02
RULE_EPS = 1e-6
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


#########################
## Per-pixel modalities ##
#########################


def semantic_image(g: GBuffer, palette: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    :return: The class-id plane (H, W) uint8 and its palette colouring (H, W, 3) uint8.
    """
    palette = palette_array() if palette is None else np.asarray(palette, dtype=np.uint8)
    ids = g.class_id.astype(np.uint8)
    return ids, palette[ids]


def instance_image(g: GBuffer) -> np.ndarray:
    annotatable = np.isin(g.class_id, [c.value for c in SemanticClass if c.annotatable])
    return np.where(annotatable, g.instance_id, 0).astype(np.int32)


def instance_color(instance_id: int) -> Tuple[int, int, int]:
    """
    Display colour of an instance or track; a bijection on ids below 2**24,
    with 0 mapped to black.
    """
    c = (int(instance_id) * 0x9E3779) & 0xFFFFFF
    return (c >> 16) & 0xFF, (c >> 8) & 0xFF, c & 0xFF


def instance_colors(instances: np.ndarray) -> np.ndarray:
    c = (instances.astype(np.int64) * 0x9E3779) & 0xFFFFFF
    return np.stack([(c >> 16) & 0xFF, (c >> 8) & 0xFF, c & 0xFF], axis=-1).astype(np.uint8)


def depth_image(g: GBuffer, near: float) -> np.ndarray:
    """
    Normalized depth ``1 - near / z``: 0 at the near plane, 1 for sky.
    """
    if near <= 0:
        raise ValueError("Near plane must be positive.")
    with np.errstate(divide="ignore"):
        d = 1.0 - near / g.depth
    return np.clip(d, 0.0, 1.0)


def metric_depth(d: np.ndarray, near: float) -> np.ndarray:
    """
    Inverse of ``depth_image``; d = 1 maps to infinity.
    """
    with np.errstate(divide="ignore"):
        return near / (1.0 - np.asarray(d, dtype=np.float64))


#################
## Frame state ##
#################


@dataclass
class AnnotatableInstance:
    instance_id: int
    class_id: int
    corners: np.ndarray  # (8, 3) world-space corners of the 3D box


@dataclass
class FrameState:
    """
    Everything ground truth needs about one instant: the posed scene, the
    annotatable instances and the poses of moving nodes keyed by instance id.
    Instances absent from ``vehicle_poses`` are static.
    """

    index: int
    time: float
    soup: TriangleSoup
    instances: List[AnnotatableInstance] = field(default_factory=list)
    vehicle_poses: Dict[int, Pose] = field(default_factory=dict)

    def instance(self, instance_id: int) -> AnnotatableInstance:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(f"No instance {instance_id} in frame {self.index}.")


##################
## Optical flow ##
##################


@dataclass
class FlowField:
    u: np.ndarray
    v: np.ndarray
    valid: np.ndarray

    @classmethod
    def invalid(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)), np.zeros((height, width), dtype=bool))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape


def previous_world_points(g: GBuffer, current: FrameState, previous: FrameState) -> Tuple[np.ndarray, np.ndarray]:
    """
    World position at the previous instant of every surface point in ``g``.

    :return: Points (H, W, 3) and a mask of pixels whose owning node existed
        at the previous instant.
    """
    points = g.world.copy()
    existed = ~g.sky
    for instance_id, pose in current.vehicle_poses.items():
        mask = g.instance_id == instance_id
        if not mask.any():
            continue
        before = previous.vehicle_poses.get(instance_id)
        if before is None:
            existed &= ~mask
            continue
        points[mask] = before.apply(pose.inverse_apply(g.world[mask]))
    return points, existed


def flow_field(
    g: GBuffer, current: FrameState, previous: FrameState, camera: Camera, previous_camera: Camera
) -> FlowField:
    """
    Geometric optical flow at time ``current.time``: each visible surface point
    is moved back to its previous position, projected through the previous
    camera and the displacement to the current pixel center is the flow.

    :raises ValueError: If the previous instant is not strictly earlier.
    """
    if not previous.time < current.time:
        raise ValueError("Flow needs a strictly positive time step.")
    h, w = g.shape
    points, existed = previous_world_points(g, current, previous)
    u_prev, v_prev, _, in_front = previous_camera.project_points(points)
    valid = existed & in_front
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    u = np.where(valid, xs[None, :] - u_prev, 0.0)
    v = np.where(valid, ys[:, None] - v_prev, 0.0)
    return FlowField(u, v, valid)


def to_gray(image: np.ndarray) -> np.ndarray:
    return (image.astype(np.float64) / 255.0) @ GRAY_WEIGHTS


@dataclass
class FlowResidual:
    median: float
    p90: float
    n_pixels: int
    residual: np.ndarray


def verify_flow_constraint(
    previous: np.ndarray, current: np.ndarray, flow: FlowField, texture_threshold: float = TEXTURE_THRESHOLD
) -> FlowResidual:
    """
    Evaluate the brightness constancy residual ``|dE/dt + grad(E) . w|`` on
    grayscale intensities in [0, 1]. The spatial gradient is a central
    difference of the mean of both frames; the temporal derivative is the
    forward difference between them. Statistics cover valid interior pixels
    whose gradient magnitude exceeds ``texture_threshold``.
    """
    e0, e1 = to_gray(previous), to_gray(current)
    gy, gx = np.gradient(0.5 * (e0 + e1))
    residual = np.abs((e1 - e0) + gx * flow.u + gy * flow.v)
    mask = flow.valid & (np.hypot(gx, gy) > texture_threshold)
    mask[0, :] = mask[-1, :] = False
    mask[:, 0] = mask[:, -1] = False
    if not mask.any():
        return FlowResidual(float("nan"), float("nan"), 0, residual)
    values = residual[mask]
    return FlowResidual(float(np.median(values)), float(np.percentile(values, 90)), int(mask.sum()), residual)


def warp_image(image: np.ndarray, flow: FlowField) -> np.ndarray:
    """
    Backward-warp the previous frame by the flow, bilinearly, to predict the
    current frame.
    """
    h, w = flow.shape
    grid_x, grid_y = np.meshgrid(np.arange(w, dtype=np.float32), np.arange(h, dtype=np.float32))
    map_x = grid_x - flow.u.astype(np.float32)
    map_y = grid_y - flow.v.astype(np.float32)
    return cv2.remap(image, map_x, map_y, interpolation=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def flow_warp_error(previous: np.ndarray, current: np.ndarray, flow: FlowField) -> float:
    """
    Median absolute grayscale error between the current frame and the warped
    previous frame over valid pixels.
    """
    warped = warp_image(previous, flow)
    error = np.abs(to_gray(warped) - to_gray(current))
    if not flow.valid.any():
        return float("nan")
    return float(np.median(error[flow.valid]))


###############
## Occlusion ##
###############


def occlusion_rate(
    instance_id: int,
    state: FrameState,
    camera: Camera,
    gbuffer: GBuffer,
    solo_counts: Optional[Dict[int, int]] = None,
) -> float:
    """
    ``1 - visible / solo`` where solo is the pixel count of the instance
    rendered alone; an instance with no solo pixels has rate 1.
    """
    if solo_counts is None or instance_id not in solo_counts:
        solo_counts = solo_pixel_counts(state.soup, camera, [instance_id])
    solo = solo_counts.get(instance_id, 0)
    if solo == 0:
        return 1.0
    visible = int((gbuffer.instance_id == instance_id).sum())
    return float(min(1.0, max(0.0, 1.0 - visible / solo)))


###########
## Boxes ##
###########


@dataclass(frozen=True)
class BoxAnnotation:
    frame: int
    track_id: int
    class_id: int
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    occlusion_rate: float
    truncated: bool

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


def projected_box(
    instance: AnnotatableInstance, camera: Camera, gbuffer: Optional[GBuffer] = None
) -> Optional[Tuple[float, float, float, float, bool]]:
    """
    Project the 3D box corners in front of the near plane and clip the 2D box
    to the image.

    :return: (x_min, y_min, x_max, y_max, truncated), or None when no corner is
        in front of the camera or the box lies entirely outside the image.
    """
    k = camera.intrinsics
    u, v, _, in_front = camera.project_points(instance.corners)
    if not in_front.any():
        return None
    u, v = u[in_front], v[in_front]
    x0, x1, y0, y1 = u.min(), u.max(), v.min(), v.max()
    if gbuffer is not None and not in_front.all():
        # corners behind the camera: cover what is actually visible
        rows, cols = np.nonzero(gbuffer.instance_id == instance.instance_id)
        if len(rows):
            x0, x1 = min(x0, cols.min() + 0.5), max(x1, cols.max() + 0.5)
            y0, y1 = min(y0, rows.min() + 0.5), max(y1, rows.max() + 0.5)
    if x1 <= 0 or y1 <= 0 or x0 >= k.width or y0 >= k.height:
        return None
    truncated = bool(x0 < 0 or y0 < 0 or x1 > k.width or y1 > k.height)
    return (
        float(max(x0, 0.0)),
        float(max(y0, 0.0)),
        float(min(x1, k.width)),
        float(min(y1, k.height)),
        truncated,
    )


def detection_boxes(
    state: FrameState,
    gbuffer: GBuffer,
    camera: Camera,
    occlusion_threshold: float = OCCLUSION_THRESHOLD,
    min_width: float = MIN_BOX_WIDTH,
    min_height: float = MIN_BOX_HEIGHT,
) -> List[BoxAnnotation]:
    """
    Boxes for every annotatable instance that survives the four rules: corner
    projection, clipping with truncation flag, minimum size and maximum
    occlusion rate. Sorted by track id.
    """
    candidates = []
    for instance in state.instances:
        box = projected_box(instance, camera, gbuffer)
        if box is None:
            continue
        x0, y0, x1, y1, truncated = box
        if x1 - x0 < min_width - RULE_EPS or y1 - y0 < min_height - RULE_EPS:
            continue
        candidates.append((instance, box))

    if not candidates:
        return []
    solo = solo_pixel_counts(state.soup, camera, [inst.instance_id for inst, _ in candidates])
    boxes = []
    for instance, (x0, y0, x1, y1, truncated) in candidates:
        rate = occlusion_rate(instance.instance_id, state, camera, gbuffer, solo)
        if rate > occlusion_threshold:
            continue
        boxes.append(
            BoxAnnotation(state.index, instance.instance_id, instance.class_id, x0, y0, x1, y1, rate, truncated)
        )
    boxes.sort(key=lambda b: b.track_id)
    logger.debug("Frame %d: %d of %d instances annotated.", state.index, len(boxes), len(state.instances))
    return boxes


############
## Tracks ##
############


@dataclass
class TrackSegment:
    track_id: int
    boxes: List[BoxAnnotation]

    @property
    def first_frame(self) -> int:
        return self.boxes[0].frame

    @property
    def last_frame(self) -> int:
        return self.boxes[-1].frame

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class TrackTable:
    segments: Dict[int, List[TrackSegment]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def track_ids(self) -> List[int]:
        return sorted(self.segments)

    def color(self, track_id: int) -> Tuple[int, int, int]:
        return instance_color(track_id)

    def all_segments(self) -> List[TrackSegment]:
        return [s for tid in self.track_ids for s in self.segments[tid]]


def tracks(per_frame_boxes: Iterable[List[BoxAnnotation]]) -> TrackTable:
    """
    Group boxes by track id into maximal runs of consecutive frames.
    """
    by_track: Dict[int, List[BoxAnnotation]] = {}
    for boxes in per_frame_boxes:
        for box in boxes:
            by_track.setdefault(box.track_id, []).append(box)

    table = TrackTable()
    for track_id, boxes in by_track.items():
        boxes.sort(key=lambda b: b.frame)
        runs = [[boxes[0]]]
        for box in boxes[1:]:
            if box.frame == runs[-1][-1].frame + 1:
                runs[-1].append(box)
            else:
                runs.append([box])
        table.segments[track_id] = [TrackSegment(track_id, run) for run in runs]
    return table
