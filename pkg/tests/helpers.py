import os

import yaml

from vtds.config import preset_path
from vtds.core.camera import Camera
from vtds.core.environment import EnvironmentState, Weather
from vtds.core.geometry import Mesh
from vtds.core.semantics import SemanticClass

import vtds

DATA_DIR = os.path.join(os.path.dirname(vtds.__file__), "data")
FIXTURE_OSM = os.path.join(DATA_DIR, "fixture.osm")
FACADE_RULES = os.path.join(DATA_DIR, "facade.rules")
ORIGIN = (40.0, 116.30)


def screen_quad(
    camera: Camera, u0, v0, u1, v1, depth, semantic=SemanticClass.BUILDING, instance_id=0, albedo=(0.5, 0.5, 0.5)
) -> Mesh:
    """
    Fronto-parallel rectangle at camera depth ``depth`` covering the pixel
    rectangle [u0, u1] x [v0, v1].
    """
    corners = camera.unproject([u0, u1, u1, u0], [v0, v0, v1, v1], [depth] * 4)
    return Mesh(
        corners,
        [[0, 1, 2], [0, 2, 3]],
        [semantic.value] * 2,
        [albedo] * 2,
        instance_id=instance_id,
    )


def flat_environment(ambient=1.0, sun=0.0, weather=Weather.SUNNY, fog=0.0) -> EnvironmentState:
    return EnvironmentState((0.0, 0.0, 1.0), sun, ambient, weather, fog, 12.0)


def write_scenario(directory, preset: str = "onboard", name: str = "scenario", **sections) -> str:
    """
    Copy a shipped preset into ``directory`` with absolute data paths and the
    given section overrides, e.g. ``capture={"frames": 3}``.
    """
    with open(preset_path(preset), encoding="utf-8") as handle:
        document = yaml.safe_load(handle)
    document["map"]["path"] = FIXTURE_OSM
    document["rules"] = FACADE_RULES
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(document.get(key), dict):
            document[key].update(value)
        else:
            document[key] = value
    path = os.path.join(os.fspath(directory), f"{name}.yaml")
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(document, handle, sort_keys=False)
    return path
