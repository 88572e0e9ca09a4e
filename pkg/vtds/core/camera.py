"""
Pinhole cameras and the two rig kinds that drive them.

Conventions: the world frame has x east, y north, z up. The camera frame has
x right, y down, z forward, and a camera stores the world-to-camera rotation
whose rows are its right, down and forward axes. Pixel (i, j) has its center
at (i + 0.5, j + 0.5).
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from vtds.core.errors import InactiveError
from vtds.core.geometry import Pose

ONBOARD_YAW_OFFSETS = (-30.0, -15.0, 0.0, 15.0, 30.0)
ADJACENT_LANE_SPACING = 5.0


@dataclass(frozen=True)
class Intrinsics:
    width: int = 500
    height: int = 375
    fov: float = 60.0  # horizontal, degrees
    near: float = 0.5

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("Image width and height must be positive.")
        if not 0.0 < self.fov < 180.0:
            raise ValueError("Horizontal FOV must lie in (0, 180) degrees.")
        if self.near <= 0:
            raise ValueError("Near plane must be positive.")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.fov) / 2.0)

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


def look_rotation(yaw: float, pitch: float = 0.0, roll: float = 0.0) -> np.ndarray:
    """
    World-to-camera rotation for a camera heading ``yaw`` radians
    counterclockwise from east, tilted down by ``pitch`` and rolled by ``roll`` about its optical
    axis.
    """
    forward = np.array(
        [math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), -math.sin(pitch)]
    )
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(forward, right)
    c, s = math.cos(roll), math.sin(roll)
    return np.stack([c * right + s * down, -s * right + c * down, forward])


@dataclass
class Camera:
    position: np.ndarray
    rotation: np.ndarray
    intrinsics: Intrinsics = field(default_factory=Intrinsics)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)

    @classmethod
    def looking(cls, position, yaw: float, pitch: float = 0.0, roll: float = 0.0,
                intrinsics: Optional[Intrinsics] = None) -> "Camera":
        return cls(position, look_rotation(yaw, pitch, roll), intrinsics or Intrinsics())

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation.T

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation + self.position

    def project_points(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """
        Vectorized projection of world points (..., 3).

        :return: u, v, z and a mask of points on or in front of the near
            plane; u and v are undefined where the mask is False.
        """
        k = self.intrinsics
        pc = self.to_camera(points)
        z = pc[..., 2]
        in_front = z >= k.near
        safe = np.where(in_front, z, 1.0)
        u = k.cx + k.focal * pc[..., 0] / safe
        v = k.cy + k.focal * pc[..., 1] / safe
        return u, v, z, in_front

    def unproject(self, u, v, z) -> np.ndarray:
        """
        World point(s) seen at pixel coordinates (u, v) at camera depth z.
        """
        k = self.intrinsics
        u, v, z = np.broadcast_arrays(np.asarray(u, float), np.asarray(v, float), np.asarray(z, float))
        pc = np.stack([(u - k.cx) / k.focal * z, (v - k.cy) / k.focal * z, z], axis=-1)
        return self.to_world(pc)


def project(camera: Camera, point) -> Optional[Tuple[float, float, float]]:
    """
    Project one world point. Returns ``None`` when the point lies behind
    the near plane.
    """
    u, v, z, ok = camera.project_points(np.asarray(point, dtype=np.float64))
    if not bool(ok):
        return None
    return float(u), float(v), float(z)


def unproject(camera: Camera, u: float, v: float, z: float) -> np.ndarray:
    return camera.unproject(u, v, z)


##########
## Rigs ##
##########


class RigKind(Enum):
    ONBOARD = "onboard"
    SURVEILLANCE = "surveillance"


@dataclass(frozen=True)
class OnboardMount:
    host: int = 0
    height: float = 2.0
    yaw_offset: float = 0.0  # degrees
    lateral_offset: float = 0.0  # meters to the right of the host
    pitch: float = 0.0  # degrees, positive looks down


@dataclass(frozen=True)
class SurveillanceMount:
    position: Tuple[float, float] = (0.0, 0.0)
    base_height: float = 2.0
    base_yaw: float = 0.0  # degrees, start of the sweep
    rotation_rate: float = 10.0  # degrees per second
    rotation_range: float = 180.0  # degrees
    lift_rate: float = 0.1  # meters per second
    lift_range: Tuple[float, float] = (2.0, 5.0)
    pitch: float = 15.0

    def __post_init__(self):
        lo, hi = self.lift_range
        if not lo < hi:
            raise ValueError("Surveillance lift range must satisfy min < max.")
        if not lo <= self.base_height <= hi:
            raise ValueError("Surveillance base height must lie inside the lift range.")
        if self.rotation_rate < 0 or self.lift_rate < 0 or self.rotation_range < 0:
            raise ValueError("Surveillance rates and ranges must be non-negative.")


@dataclass(frozen=True)
class CameraRig:
    kind: RigKind
    intrinsics: Intrinsics = field(default_factory=Intrinsics)
    onboard: OnboardMount = field(default_factory=OnboardMount)
    surveillance: SurveillanceMount = field(default_factory=SurveillanceMount)

    def with_yaw_offset(self, degrees: float) -> "CameraRig":
        return replace(self, onboard=replace(self.onboard, yaw_offset=float(degrees)))

    def with_lateral_offset(self, meters: float) -> "CameraRig":
        return replace(self, onboard=replace(self.onboard, lateral_offset=float(meters)))

    def get_params(self) -> dict:
        params = {
            "kind": self.kind.value,
            "width": self.intrinsics.width,
            "height": self.intrinsics.height,
            "fov": self.intrinsics.fov,
            "near": self.intrinsics.near,
        }
        mount = self.onboard if self.kind is RigKind.ONBOARD else self.surveillance
        params.update({k: v for k, v in mount.__dict__.items()})
        return params


def triangle_wave(x: float, amplitude: float) -> float:
    """
    Ping-pong sweep: rises from 0 to ``amplitude`` with slope 1, then falls back.
    """
    if amplitude <= 0:
        return 0.0
    m = math.fmod(x, 2.0 * amplitude)
    if m < 0:
        m += 2.0 * amplitude
    return m if m <= amplitude else 2.0 * amplitude - m


def surveillance_yaw(mount: SurveillanceMount, t: float) -> float:
    """
    Yaw in degrees at time ``t``.
    """
    return mount.base_yaw + triangle_wave(mount.rotation_rate * t, mount.rotation_range)


def surveillance_height(mount: SurveillanceMount, t: float) -> float:
    lo, hi = mount.lift_range
    phase = mount.base_height - lo
    return lo + triangle_wave(mount.lift_rate * t + phase, hi - lo)


def camera_pose(rig: CameraRig, t: float, vehicle_poses: Dict[int, Pose]) -> Camera:
    """
    Place the rig's camera at time ``t``.

    :param vehicle_poses: Poses of the active vehicles, keyed by trajectory index.
    :raises InactiveError: If an onboard rig's host vehicle is not active at ``t``.
    """
    if rig.kind is RigKind.ONBOARD:
        mount = rig.onboard
        host = vehicle_poses.get(mount.host)
        if host is None:
            raise InactiveError(f"Onboard camera host vehicle {mount.host} is inactive at t={t}.")
        right = np.array([math.sin(host.yaw), -math.cos(host.yaw), 0.0])
        position = np.asarray(host.position, dtype=np.float64) + mount.lateral_offset * right
        position[2] += mount.height
        yaw = host.yaw + math.radians(mount.yaw_offset)
        return Camera.looking(position, yaw, math.radians(mount.pitch), intrinsics=rig.intrinsics)

    mount = rig.surveillance
    x, y = mount.position
    position = np.array([x, y, surveillance_height(mount, t)])
    yaw = math.radians(surveillance_yaw(mount, t))
    return Camera.looking(position, yaw, math.radians(mount.pitch), intrinsics=rig.intrinsics)


class OrientationSweep:
    """
    The five onboard yaw offsets, relative to the lane direction.
    """

    def __init__(self, rig: CameraRig, offsets=ONBOARD_YAW_OFFSETS):
        if rig.kind is not RigKind.ONBOARD:
            raise ValueError("Orientation sweeps apply to onboard rigs only.")
        self.rig = rig
        self.offsets = tuple(float(o) for o in offsets)

    def __len__(self) -> int:
        return len(self.offsets)

    def __iter__(self) -> Iterator[CameraRig]:
        for offset in self.offsets:
            yield self.rig.with_yaw_offset(offset)


def adjacent_lane_rigs(rig: CameraRig, count: int = 2, spacing: float = ADJACENT_LANE_SPACING) -> List[CameraRig]:
    """
    Copies of an onboard rig shifted leftwards by ``spacing`` meters each, one
    per adjacent lane.
    """
    if rig.kind is not RigKind.ONBOARD:
        raise ValueError("Adjacent-lane rigs apply to onboard rigs only.")
    return [rig.with_lateral_offset(rig.onboard.lateral_offset - k * spacing) for k in range(count)]
