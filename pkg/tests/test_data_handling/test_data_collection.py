import os

import numpy as np
import pytest

from vtds.core.camera import CameraRig, Intrinsics, RigKind, SurveillanceMount
from vtds.core.dynamics import Trajectory
from vtds.core.geometry import box
from vtds.core.semantics import SemanticClass
from vtds.core.simulation import Simulation
from vtds.data_handling.data_collector import DataCollector
from vtds.data_handling.visualization import Visualization


@pytest.fixture
def simulation():
    mount = SurveillanceMount(base_height=2.0, rotation_rate=0.0, lift_rate=0.0, pitch=5.0)
    wall = box((40.0, 0.0), (1.0, 200.0, 30.0), -5.0, SemanticClass.BUILDING, (0.5, 0.5, 0.5))
    return (
        Simulation(seed=2, frame_rate=10.0)
        .add_trajectories([Trajectory([[10.0, -10.0], [10.0, 30.0]], start_offset=8.0, speed=5.0)])
        .add_static(wall)
        .add_camera(CameraRig(RigKind.SURVEILLANCE, intrinsics=Intrinsics(200, 150, 90.0), surveillance=mount))
        .build()
    )


@pytest.fixture
def collector(simulation):
    return DataCollector(simulation)


def test_first_frame_has_no_flow(collector):
    bundle = collector.collect_frame(0)
    assert not bundle.flow.valid.any()
    assert bundle.shape == (150, 200)


def test_bundle_modalities(collector):
    bundle = collector.collect_frame(0)
    assert bundle.semantic_ids.dtype == np.uint8
    assert bundle.semantic_rgb.shape == (150, 200, 3)
    assert set(np.unique(bundle.instances).tolist()) == {0, 1}
    assert bundle.depth.min() >= 0.0 and bundle.depth.max() <= 1.0
    assert [b.track_id for b in bundle.boxes] == [1]
    assert bundle.boxes[0].frame == 0


def test_flow_follows_the_car(collector):
    collector.collect_frame(0)
    bundle = collector.collect_frame(1)
    car = bundle.instances == 1
    assert bundle.flow.valid[car].all()
    assert (bundle.flow.u[car] < 0).all()


def test_cached_predecessor_matches_fresh(simulation):
    sequential = DataCollector(simulation)
    for index in range(3):
        last = sequential.collect_frame(index)
    fresh = DataCollector(simulation).collect_frame(2)
    assert np.array_equal(last.flow.valid, fresh.flow.valid)
    assert np.array_equal(last.flow.u, fresh.flow.u)
    assert np.array_equal(last.flow.v, fresh.flow.v)


def test_stats(collector):
    for index in range(3):
        collector.collect_frame(index)
    stats = collector.stats.as_dict()
    assert stats["frame_count"] == 3
    assert len(stats["class_pixel_counts"]) == 15
    assert sum(stats["class_pixel_counts"].values()) == 3 * 150 * 200
    assert stats["class_box_counts"]["car"] == 3
    assert stats["class_box_counts"]["pedestrian"] == 0


def test_metadata(collector):
    assert collector.metadata["seed"] == 2
    assert collector.metadata["camera"]["kind"] == "surveillance"


def test_visualization(collector, tmp_path):
    bundle = collector.collect_frame(0)
    path = Visualization(bundle).save(os.fspath(tmp_path / "overlay.png"), dpi=40)
    assert os.path.getsize(path) > 0
