"""
Scenario configuration: one YAML document per run, with named presets shipped
in ``vtds/presets``. Relative paths resolve against the document's directory.
"""

import hashlib
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from vtds.core.camera import CameraRig, Intrinsics, OnboardMount, RigKind, SurveillanceMount
from vtds.core.dynamics import DEFAULT_SPEED, VehicleCensus
from vtds.core.environment import (
    DEFAULT_AMBIENT,
    DEFAULT_FOG_DENSITY,
    ILLUMINATION_PRESETS,
    EnvironmentSchedule,
    Weather,
)
from vtds.core.errors import ConfigError, ConfigIOError
from vtds.core.ground_truth import OCCLUSION_THRESHOLD
from vtds.core.scene import PropPolicy, VehicleKind

OUTPUT_ROOT_ENV = "VTDS_OUTPUT_ROOT"
PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")
PRESETS = ("onboard", "surveillance", "onboard_adjacent")


@dataclass
class MapSection:
    path: str = ""
    origin: Tuple[float, float] = (0.0, 0.0)


@dataclass
class PropSection:
    lamp_spacing: float = 15.0
    tree_spacing: float = 15.0
    billboard_spacing: float = 120.0
    fence_spacing: float = math.inf
    fence_length: float = 6.0
    junction_props: bool = True
    pedestrian_density: float = 0.0
    cyclist_density: float = 0.0
    chair_density: float = 0.0


@dataclass
class VehicleSection:
    parked: Dict[str, int] = field(default_factory=dict)
    moving: Dict[str, int] = field(default_factory=dict)
    speed: float = DEFAULT_SPEED
    speed_spread: float = 0.0


@dataclass
class CameraSection:
    preset: str = "onboard"
    width: int = 500
    height: int = 375
    fov: float = 60.0
    near: float = 0.5
    onboard: Dict[str, Any] = field(default_factory=dict)
    surveillance: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EnvironmentSection:
    weather: str = "sunny"
    time_of_day: Union[float, str] = 12.0
    hours_per_second: float = 0.0
    keyframes: List[Tuple[float, str]] = field(default_factory=list)
    ambient: float = DEFAULT_AMBIENT
    fog_density: float = DEFAULT_FOG_DENSITY


@dataclass
class CaptureSection:
    frames: int = 100
    frame_rate: float = 10.0
    occlusion_threshold: float = OCCLUSION_THRESHOLD


@dataclass
class ScenarioConfig:
    map: MapSection = field(default_factory=MapSection)
    rules: str = ""
    props: PropSection = field(default_factory=PropSection)
    vehicles: VehicleSection = field(default_factory=VehicleSection)
    camera: CameraSection = field(default_factory=CameraSection)
    environment: EnvironmentSection = field(default_factory=EnvironmentSection)
    capture: CaptureSection = field(default_factory=CaptureSection)
    seed: int = 0
    output: str = ""
    base_dir: str = "."
    name: str = "scenario"

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def map_path(self) -> str:
        return self.resolve(self.map.path)

    @property
    def rules_path(self) -> str:
        return self.resolve(self.rules)

    @property
    def output_dir(self) -> str:
        if self.output:
            return self.resolve(self.output)
        return os.path.join(os.environ.get(OUTPUT_ROOT_ENV, "output"), self.name)

    def to_dict(self) -> dict:
        """
        The effective scenario, without the output location and file-system
        context, in a YAML-safe form.
        """
        data = asdict(self)
        for key in ("output", "base_dir", "name"):
            data.pop(key)
        data["props"] = {k: (None if isinstance(v, float) and math.isinf(v) else v) for k, v in data["props"].items()}
        return _plain(data)

    def census(self) -> VehicleCensus:
        return VehicleCensus(self.vehicles.parked, self.vehicles.moving, self.vehicles.speed, self.vehicles.speed_spread)

    def prop_policy(self) -> PropPolicy:
        return PropPolicy(**asdict(self.props))

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.camera.width, self.camera.height, self.camera.fov, self.camera.near)

    def rig(self) -> CameraRig:
        kind = RigKind.SURVEILLANCE if self.camera.preset == "surveillance" else RigKind.ONBOARD
        surveillance = dict(self.camera.surveillance)
        for key in ("position", "lift_range"):
            if key in surveillance:
                surveillance[key] = tuple(float(x) for x in surveillance[key])
        return CameraRig(
            kind,
            self.intrinsics(),
            onboard=OnboardMount(**self.camera.onboard),
            surveillance=SurveillanceMount(**surveillance),
        )

    def schedule(self) -> EnvironmentSchedule:
        env = self.environment
        return EnvironmentSchedule(
            weather=Weather(env.weather),
            time_of_day=env.time_of_day,
            hours_per_second=env.hours_per_second,
            keyframes=[(t, Weather(w)) for t, w in env.keyframes],
            ambient=env.ambient,
            fog_density=env.fog_density,
        )


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def config_hash(config: ScenarioConfig) -> str:
    canonical = yaml.safe_dump(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def preset_path(name: str) -> str:
    return os.path.join(PRESET_DIR, f"{name}.yaml")


##############
## Loading ##
##############


_SECTIONS = {
    "map": MapSection,
    "props": PropSection,
    "vehicles": VehicleSection,
    "camera": CameraSection,
    "environment": EnvironmentSection,
    "capture": CaptureSection,
}


def _build_section(cls, data: Any, name: str, violations: List[str]):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        violations.append(f"{name}: expected a mapping, got {type(data).__name__}.")
        return cls()
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    for key in unknown:
        violations.append(f"{name}.{key}: unknown field; expected one of {sorted(known)}.")
    values = {k: v for k, v in data.items() if k in known}
    if cls is PropSection:
        values = {k: (math.inf if v is None else v) for k, v in values.items()}
    return cls(**values)


def config_from_dict(data: dict, base_dir: str = ".", name: str = "scenario") -> Tuple[ScenarioConfig, List[str]]:
    """
    Build a config from a parsed document.

    :return: The config and the structural violations met while building it.
    """
    violations: List[str] = []
    if not isinstance(data, dict):
        return ScenarioConfig(base_dir=base_dir, name=name), ["document: expected a mapping at top level."]
    known = set(_SECTIONS) | {"rules", "seed", "output"}
    for key in sorted(set(data) - known):
        violations.append(f"{key}: unknown field; expected one of {sorted(known)}.")
    sections = {key: _build_section(cls, data.get(key), key, violations) for key, cls in _SECTIONS.items()}
    config = ScenarioConfig(
        rules=str(data.get("rules") or ""),
        seed=data.get("seed", 0),
        output=str(data.get("output") or ""),
        base_dir=base_dir,
        name=name,
        **sections,
    )
    return config, violations


def _number(value, name: str, violations: List[str], low=None, high=None, low_open=False, high_open=False) -> bool:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        violations.append(f"{name}: expected a number, got {value!r}.")
        return False
    bad_low = low is not None and (value <= low if low_open else value < low)
    bad_high = high is not None and (value >= high if high_open else value > high)
    if bad_low or bad_high:
        lo = "-inf" if low is None else low
        hi = "inf" if high is None else high
        bracket = ("(" if low_open else "[") + f"{lo}, {hi}" + (")" if high_open else "]")
        violations.append(f"{name}: {value} is outside {bracket}.")
        return False
    return True


def check_config(config: ScenarioConfig) -> List[str]:
    """
    Every violation in the config, not just the first.
    """
    v: List[str] = []

    if isinstance(config.seed, bool) or not isinstance(config.seed, int) or not 0 <= config.seed < 2**64:
        v.append(f"seed: expected an integer in [0, 2**64), got {config.seed!r}.")

    if not config.map.path:
        v.append("map.path: missing.")
    elif not os.path.isfile(config.map_path):
        v.append(f"map.path: file not found: {config.map_path}.")
    origin = config.map.origin
    if not isinstance(origin, (list, tuple)) or len(origin) != 2:
        v.append(f"map.origin: expected [lat, lon], got {origin!r}.")
    else:
        _number(origin[0], "map.origin.lat", v, -90, 90)
        _number(origin[1], "map.origin.lon", v, -180, 180)

    if not config.rules:
        v.append("rules: missing.")
    elif not os.path.isfile(config.rules_path):
        v.append(f"rules: file not found: {config.rules_path}.")

    props = config.props
    for key in ("lamp_spacing", "tree_spacing", "billboard_spacing", "fence_spacing", "fence_length"):
        _number(getattr(props, key), f"props.{key}", v, 0, None, low_open=True)
    for key in ("pedestrian_density", "cyclist_density", "chair_density"):
        _number(getattr(props, key), f"props.{key}", v, 0, None)

    kinds = [k.value for k in VehicleKind]
    for group in ("parked", "moving"):
        counts = getattr(config.vehicles, group)
        if not isinstance(counts, dict):
            v.append(f"vehicles.{group}: expected a mapping of kind to count.")
            continue
        for kind, count in counts.items():
            if kind not in kinds:
                v.append(f"vehicles.{group}.{kind}: unknown vehicle kind; allowed: {kinds}.")
            if isinstance(count, bool) or not isinstance(count, int) or count < 0:
                v.append(f"vehicles.{group}.{kind}: count must be an integer >= 0, got {count!r}.")
    if _number(config.vehicles.speed, "vehicles.speed", v, 0, None):
        _number(config.vehicles.speed_spread, "vehicles.speed_spread", v, 0, config.vehicles.speed)

    cam = config.camera
    if cam.preset not in ("onboard", "surveillance"):
        v.append(f"camera.preset: unknown preset {cam.preset!r}; allowed: ['onboard', 'surveillance'].")
    for key in ("width", "height"):
        value = getattr(cam, key)
        if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
            v.append(f"camera.{key}: expected a positive integer, got {value!r}.")
    _number(cam.fov, "camera.fov", v, 0, 180, low_open=True, high_open=True)
    _number(cam.near, "camera.near", v, 0, None, low_open=True)
    for mount_name, cls in (("onboard", OnboardMount), ("surveillance", SurveillanceMount)):
        mount = getattr(cam, mount_name)
        if not isinstance(mount, dict):
            v.append(f"camera.{mount_name}: expected a mapping.")
            continue
        for key in sorted(set(mount) - set(cls.__dataclass_fields__)):
            v.append(f"camera.{mount_name}.{key}: unknown field.")
    if isinstance(cam.onboard, dict):
        o = cam.onboard
        host = o.get("host", 0)
        if isinstance(host, bool) or not isinstance(host, int) or host < 0:
            v.append(f"camera.onboard.host: expected a trajectory index >= 0, got {host!r}.")
        if "height" in o:
            _number(o["height"], "camera.onboard.height", v, 0, None, low_open=True)
        for key in ("yaw_offset", "lateral_offset"):
            if key in o:
                _number(o[key], f"camera.onboard.{key}", v)
        if "pitch" in o:
            _number(o["pitch"], "camera.onboard.pitch", v, -90, 90, low_open=True, high_open=True)
    if isinstance(cam.surveillance, dict):
        s = cam.surveillance
        position = s.get("position", SurveillanceMount.position)
        if not isinstance(position, (list, tuple)) or len(position) != 2:
            v.append(f"camera.surveillance.position: expected [x, y], got {position!r}.")
        else:
            _number(position[0], "camera.surveillance.position.x", v)
            _number(position[1], "camera.surveillance.position.y", v)
        lift = s.get("lift_range", SurveillanceMount.lift_range)
        lift_ok = isinstance(lift, (list, tuple)) and len(lift) == 2
        lift_ok = lift_ok and all(_number(x, "camera.surveillance.lift_range", []) for x in lift)
        if not lift_ok or not lift[0] < lift[1]:
            v.append(f"camera.surveillance.lift_range: expected [min, max] with min < max, got {lift!r}.")
        else:
            base = s.get("base_height", SurveillanceMount.base_height)
            _number(base, "camera.surveillance.base_height", v, lift[0], lift[1])
        for key in ("rotation_rate", "rotation_range", "lift_rate"):
            if key in s:
                _number(s[key], f"camera.surveillance.{key}", v, 0, None)
        if "base_yaw" in s:
            _number(s["base_yaw"], "camera.surveillance.base_yaw", v)
        if "pitch" in s:
            _number(s["pitch"], "camera.surveillance.pitch", v, -90, 90, low_open=True, high_open=True)

    env = config.environment
    weathers = Weather.names()
    if env.weather not in weathers:
        v.append(f"environment.weather: unknown weather {env.weather!r}; allowed: {weathers}.")
    for i, frame in enumerate(env.keyframes):
        if not isinstance(frame, (list, tuple)) or len(frame) != 2:
            v.append(f"environment.keyframes[{i}]: expected [time, weather].")
            continue
        _number(frame[0], f"environment.keyframes[{i}].time", v, 0, None)
        if frame[1] not in weathers:
            v.append(f"environment.keyframes[{i}].weather: unknown weather {frame[1]!r}; allowed: {weathers}.")
    if isinstance(env.time_of_day, str):
        if env.time_of_day not in ILLUMINATION_PRESETS:
            v.append(
                f"environment.time_of_day: unknown preset {env.time_of_day!r}; "
                f"allowed: an hour in [0, 24) or one of {sorted(ILLUMINATION_PRESETS)}."
            )
    else:
        _number(env.time_of_day, "environment.time_of_day", v, 0, 24, high_open=True)
    _number(env.hours_per_second, "environment.hours_per_second", v, 0, None)
    _number(env.ambient, "environment.ambient", v, 0, 1)
    _number(env.fog_density, "environment.fog_density", v, 0, None, low_open=True)

    cap = config.capture
    if isinstance(cap.frames, bool) or not isinstance(cap.frames, int) or cap.frames <= 0:
        v.append(f"capture.frames: expected an integer > 0, got {cap.frames!r}.")
    _number(cap.frame_rate, "capture.frame_rate", v, 0, None, low_open=True)
    _number(cap.occlusion_threshold, "capture.occlusion_threshold", v, 0, 1)
    return v


def load_config(path: str) -> Tuple[ScenarioConfig, List[str]]:
    """
    :raises ConfigIOError: If the file cannot be read.
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigIOError(f"Cannot read config {path}: {exc.strerror}") from exc
    base_dir = os.path.dirname(os.path.abspath(path))
    name = os.path.splitext(os.path.basename(path))[0]
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        return ScenarioConfig(base_dir=base_dir, name=name), [f"document: invalid YAML ({exc})."]
    config, violations = config_from_dict(data if data is not None else {}, base_dir, name)
    return config, violations + check_config(config)


def validate_config(path: str) -> ScenarioConfig:
    """
    Load and validate a scenario document.

    :raises ConfigIOError: If the file cannot be read.
    :raises ConfigError: Listing every violation found.
    """
    config, violations = load_config(path)
    if violations:
        raise ConfigError(violations)
    return config


def apply_overrides(
    config: ScenarioConfig,
    seed: Optional[int] = None,
    frames: Optional[int] = None,
    weather: Optional[str] = None,
    time_of_day: Optional[Union[float, str]] = None,
    output: Optional[str] = None,
    yaw_offset: Optional[float] = None,
) -> ScenarioConfig:
    """
    Command-line overrides for one-field-at-a-time comparisons.

    :raises ConfigError: If an override makes the config invalid.
    """
    if seed is not None:
        config = replace(config, seed=seed)
    if frames is not None:
        config = replace(config, capture=replace(config.capture, frames=frames))
    if weather is not None:
        config = replace(config, environment=replace(config.environment, weather=weather, keyframes=[]))
    if time_of_day is not None:
        config = replace(config, environment=replace(config.environment, time_of_day=time_of_day))
    if output is not None:
        config = replace(config, output=os.path.abspath(output))
    if yaw_offset is not None:
        onboard = dict(config.camera.onboard, yaw_offset=yaw_offset)
        config = replace(config, camera=replace(config.camera, onboard=onboard))
    violations = check_config(config)
    if violations:
        raise ConfigError(violations)
    return config
