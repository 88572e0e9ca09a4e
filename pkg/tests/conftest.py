import pytest

from vtds.core.camera import Camera, Intrinsics
from vtds.core.osm_map import build_road_network, parse_osm
from vtds.core.shape_grammar import parse_rules

from tests.helpers import FACADE_RULES, FIXTURE_OSM, ORIGIN


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="Run full-size generation runs.")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size generation run, enabled with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def fixture_map():
    with open(FIXTURE_OSM, encoding="utf-8") as handle:
        return parse_osm(handle.read())


@pytest.fixture(scope="session")
def fixture_network(fixture_map):
    return build_road_network(fixture_map, ORIGIN)


@pytest.fixture(scope="session")
def facade_program():
    with open(FACADE_RULES, encoding="utf-8") as handle:
        return parse_rules(handle.read())


@pytest.fixture
def square_camera():
    """
    200x150 camera at the origin looking east with a 90 degree FOV, so the
    focal length is 100 px and one meter at depth 10 spans 10 px.
    """
    return Camera.looking((0.0, 0.0, 0.0), 0.0, intrinsics=Intrinsics(200, 150, 90.0, 0.5))
