import csv
import os
import tracemalloc

import pytest
import yaml

from vtds.cli import EXIT_OK, build_simulation, main
from vtds.config import PRESETS, validate_config
from vtds.data_handling.data_collector import DataCollector
from vtds.data_handling.data_exporter import DatasetWriter

from tests.helpers import write_scenario

pytestmark = pytest.mark.slow

CORES = os.cpu_count() or 1
FPS_FLOOR = 8.0


def annotation_frames(root):
    with open(os.path.join(root, "annotations.csv"), newline="", encoding="utf-8") as handle:
        return [int(row["frame"]) for row in csv.DictReader(handle)]


@pytest.fixture(scope="module", params=PRESETS)
def preset_run(request, tmp_path_factory):
    directory = tmp_path_factory.mktemp(request.param)
    scenario = write_scenario(directory, preset=request.param, capture={"frames": 100})
    out = os.fspath(directory / "out")
    assert main(["run", scenario, "--output", out, "--threads", str(CORES)]) == EXIT_OK
    with open(os.path.join(out, "manifest.yaml"), encoding="utf-8") as handle:
        return request.param, out, yaml.safe_load(handle)


def test_preset_run(preset_run, record_property):
    name, out, manifest = preset_run
    record_property(f"{name}_fps", manifest["throughput_fps"])
    assert manifest["frame_count"] == 100
    assert manifest["vehicle_count"] == 67
    assert sum(manifest["class_pixel_counts"].values()) == 100 * 500 * 375
    for modality in ("rgb", "semantic_id", "semantic_rgb", "instance", "depth", "flow"):
        assert sorted(os.listdir(os.path.join(out, modality))) == [f"{i:06d}.png" for i in range(100)]
    frames = annotation_frames(out)
    assert frames == sorted(frames)
    assert set(frames) <= set(range(100))


def test_onboard_throughput(preset_run):
    name, _, manifest = preset_run
    if name != "onboard":
        pytest.skip("throughput is measured on the onboard preset")
    if CORES < 8:
        pytest.skip(f"needs 8 cores, found {CORES}; measured {manifest['throughput_fps']:.2f} fps")
    assert manifest["throughput_fps"] >= FPS_FLOOR


def test_long_run_memory(tmp_path):
    config = validate_config(write_scenario(tmp_path, camera={"width": 160, "height": 120}))
    collector = DataCollector(build_simulation(config), config.capture.occlusion_threshold)
    out = os.fspath(tmp_path / "out")
    samples = []
    tracemalloc.start()
    try:
        with DatasetWriter(out, (160, 120)) as writer:
            for index in range(1000):
                writer.write_frame_bundle(collector.collect_frame(index))
                if index % 100 == 99:
                    samples.append(tracemalloc.get_traced_memory()[0])
    finally:
        tracemalloc.stop()
    steady = samples[0]
    assert max(samples) <= 2 * steady
    assert collector.stats.frames == 1000
    assert sorted(os.listdir(os.path.join(out, "depth"))) == [f"{i:06d}.png" for i in range(1000)]
    frames = annotation_frames(out)
    assert frames == sorted(frames) and set(frames) <= set(range(1000))
