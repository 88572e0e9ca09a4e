import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Tuple, Union

import numpy as np

DAY_LENGTH = 24.0
DEFAULT_FOG_DENSITY = 0.03
DEFAULT_AMBIENT = 0.2
CLOUDY_ATTENUATION = 0.4
RAINY_ATTENUATION = 0.8

ILLUMINATION_PRESETS = {"dawn": 6.5, "noon": 12.0, "dusk": 17.5}


def resolve_hour(value: Union[float, str]) -> float:
    """
    An hour of the day, or the name of an illumination preset.
    """
    if isinstance(value, str):
        try:
            return ILLUMINATION_PRESETS[value]
        except KeyError:
            raise ValueError(
                f"Unknown illumination preset '{value}'; expected one of {sorted(ILLUMINATION_PRESETS)}."
            ) from None
    return float(value)


class Weather(Enum):
    SUNNY = "sunny"
    CLOUDY = "cloudy"
    RAINY = "rainy"
    FOGGY = "foggy"

    @classmethod
    def names(cls) -> List[str]:
        return [w.value for w in cls]


@dataclass(frozen=True)
class EnvironmentState:
    sun_direction: Tuple[float, float, float]
    sun_intensity: float
    ambient: float
    weather: Weather
    fog_density: float
    time_of_day: float

    def get_params(self) -> dict:
        return {
            "sun_direction": list(self.sun_direction),
            "sun_intensity": self.sun_intensity,
            "ambient": self.ambient,
            "weather": self.weather.value,
            "fog_density": self.fog_density,
            "time_of_day": self.time_of_day,
        }


@dataclass
class EnvironmentSchedule:
    """
    Weather and clock over the capture. ``keyframes`` lists (time in seconds,
    weather) switches; before the first switch ``weather`` applies. The clock
    starts at ``time_of_day`` hours and advances ``hours_per_second``.
    """

    weather: Weather = Weather.SUNNY
    time_of_day: Union[float, str] = 12.0
    hours_per_second: float = 0.0
    keyframes: List[Tuple[float, Weather]] = field(default_factory=list)
    ambient: float = DEFAULT_AMBIENT
    fog_density: float = DEFAULT_FOG_DENSITY

    def __post_init__(self):
        self.weather = Weather(self.weather)
        self.time_of_day = resolve_hour(self.time_of_day)
        self.keyframes = sorted((float(t), Weather(w)) for t, w in self.keyframes)
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError("Ambient intensity must lie in [0, 1].")
        if self.fog_density <= 0:
            raise ValueError("Fog density must be positive.")

    def weather_at(self, t: float) -> Weather:
        current = self.weather
        for start, weather in self.keyframes:
            if start > t:
                break
            current = weather
        return current

    def hour_at(self, t: float) -> float:
        return (self.time_of_day + self.hours_per_second * t) % DAY_LENGTH


def sun_elevation(hour: float) -> float:
    """
    Elevation in degrees: a sine arc peaking at 90 at noon and crossing the
    horizon at 6:00 and 18:00, mirrored below the horizon at night.
    """
    hour = hour % DAY_LENGTH
    if 6.0 <= hour <= 18.0:
        return 90.0 * math.sin(math.pi * (hour - 6.0) / 12.0)
    return -90.0 * math.sin(math.pi * ((hour - 18.0) % DAY_LENGTH) / 12.0)


def sun_direction(hour: float) -> Tuple[float, float, float]:
    """
    Unit vector towards the sun; it rises in the east and sets in the west
    passing south.
    """
    elevation = math.radians(sun_elevation(hour))
    azimuth = math.pi * (hour - 6.0) / 12.0
    d = np.array(
        [
            math.cos(elevation) * math.cos(azimuth),
            -math.cos(elevation) * math.sin(azimuth),
            math.sin(elevation),
        ]
    )
    d /= np.linalg.norm(d)
    return float(d[0]), float(d[1]), float(d[2])


def environment_at(schedule: EnvironmentSchedule, t: float) -> EnvironmentState:
    hour = schedule.hour_at(t)
    weather = schedule.weather_at(t)
    intensity = max(0.0, math.sin(math.radians(sun_elevation(hour))))
    if weather is Weather.CLOUDY:
        intensity *= CLOUDY_ATTENUATION
    elif weather is Weather.RAINY:
        intensity *= RAINY_ATTENUATION
    return EnvironmentState(
        sun_direction=sun_direction(hour),
        sun_intensity=intensity,
        ambient=schedule.ambient,
        weather=weather,
        fog_density=schedule.fog_density if weather is Weather.FOGGY else 0.0,
        time_of_day=hour,
    )
