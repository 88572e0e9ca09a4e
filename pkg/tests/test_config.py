import os

import pytest
import yaml

from vtds.config import (
    OUTPUT_ROOT_ENV,
    PRESETS,
    apply_overrides,
    config_hash,
    load_config,
    preset_path,
    validate_config,
)
from vtds.core.camera import RigKind
from vtds.core.environment import Weather
from vtds.core.errors import ConfigError, ConfigIOError

from tests.helpers import FIXTURE_OSM, write_scenario


@pytest.mark.parametrize("name", PRESETS)
def test_presets_are_valid(name):
    config, violations = load_config(preset_path(name))
    assert violations == []
    assert os.path.samefile(config.map_path, FIXTURE_OSM)


def test_preset_rigs():
    assert validate_config(preset_path("onboard")).rig().kind is RigKind.ONBOARD
    assert validate_config(preset_path("surveillance")).rig().kind is RigKind.SURVEILLANCE
    adjacent = validate_config(preset_path("onboard_adjacent")).rig()
    assert adjacent.onboard.lateral_offset == pytest.approx(-5.0)


def test_every_violation_is_reported(tmp_path):
    path = write_scenario(tmp_path, capture={"frames": 0}, rules="missing.rules")
    config, violations = load_config(path)
    assert len(violations) == 2
    assert any(v.startswith("capture.frames") for v in violations)
    assert any(v.startswith("rules") and "missing.rules" in v for v in violations)
    with pytest.raises(ConfigError) as info:
        validate_config(path)
    assert len(info.value.violations) == 2


def test_unknown_weather_names_allowed_values(tmp_path):
    _, violations = load_config(write_scenario(tmp_path, environment={"weather": "hail"}))
    (violation,) = violations
    assert violation.startswith("environment.weather")
    assert all(name in violation for name in Weather.names())


def test_unknown_fields(tmp_path):
    _, violations = load_config(write_scenario(tmp_path, capture={"fps": 10}, colour="red"))
    assert len(violations) == 2
    assert any(v.startswith("capture.fps") for v in violations)
    assert any(v.startswith("colour") for v in violations)


@pytest.mark.parametrize(
    "sections,prefix",
    [
        ({"camera": {"width": 0}}, "camera.width"),
        ({"camera": {"fov": 180.0}}, "camera.fov"),
        ({"vehicles": {"moving": {"tank": 1}}}, "vehicles.moving.tank"),
        ({"vehicles": {"parked": {"car": -1}}}, "vehicles.parked.car"),
        ({"environment": {"time_of_day": 24.0}}, "environment.time_of_day"),
        ({"map": {"origin": [91.0, 0.0]}}, "map.origin.lat"),
        ({"seed": -4}, "seed"),
        ({"camera": {"onboard": {"yaw_offset": "abc"}}}, "camera.onboard.yaw_offset"),
        ({"camera": {"onboard": {"pitch": 95.0}}}, "camera.onboard.pitch"),
        ({"camera": {"surveillance": {"position": [0.0, "x"]}}}, "camera.surveillance.position.y"),
        ({"camera": {"surveillance": {"lift_range": ["low", 5.0]}}}, "camera.surveillance.lift_range"),
    ],
)
def test_range_checks(tmp_path, sections, prefix):
    _, violations = load_config(write_scenario(tmp_path, **sections))
    assert [v.split(":")[0] for v in violations] == [prefix]


def test_illumination_preset_names(tmp_path):
    config = validate_config(write_scenario(tmp_path, environment={"time_of_day": "dusk"}))
    assert config.schedule().time_of_day == 17.5
    _, violations = load_config(write_scenario(tmp_path, environment={"time_of_day": "teatime"}))
    assert [v.split(":")[0] for v in violations] == ["environment.time_of_day"]


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigIOError):
        load_config(tmp_path / "absent.yaml")


def test_invalid_yaml(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("seed: [1, 2\n", encoding="utf-8")
    _, violations = load_config(path)
    assert len(violations) == 1
    assert "invalid YAML" in violations[0]


class TestHash:
    def test_stable(self, tmp_path):
        a = validate_config(write_scenario(tmp_path, name="a"))
        b = validate_config(write_scenario(tmp_path, name="b", output="elsewhere"))
        # name and output location do not enter the hash
        assert config_hash(a) == config_hash(b)
        assert len(config_hash(a)) == 64

    def test_sensitive_to_content(self):
        config = validate_config(preset_path("onboard"))
        assert config_hash(config) != config_hash(apply_overrides(config, seed=8))

    def test_dict_is_yaml_safe(self):
        data = validate_config(preset_path("onboard")).to_dict()
        assert yaml.safe_load(yaml.safe_dump(data)) == data
        assert data["props"]["fence_spacing"] is None
        assert "output" not in data


class TestOverrides:
    @pytest.fixture
    def config(self):
        return validate_config(preset_path("onboard"))

    def test_fields(self, config, tmp_path):
        changed = apply_overrides(config, frames=3, weather="rainy", time_of_day=18.5, output=tmp_path, yaw_offset=15.0)
        assert changed.capture.frames == 3
        assert changed.schedule().weather is Weather.RAINY
        assert changed.environment.time_of_day == 18.5
        assert changed.output_dir == os.path.abspath(tmp_path)
        assert changed.rig().onboard.yaw_offset == 15.0
        assert config.capture.frames == 100

    def test_invalid_override(self, config):
        with pytest.raises(ConfigError):
            apply_overrides(config, weather="hail")
        with pytest.raises(ConfigError):
            apply_overrides(config, frames=0)

    def test_output_root(self, config, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, os.fspath(tmp_path))
        assert config.output_dir == os.path.join(os.fspath(tmp_path), "onboard")
