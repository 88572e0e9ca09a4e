# data_collector.py

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from vtds.core.camera import Camera
from vtds.core.environment import EnvironmentState
from vtds.core.ground_truth import (
    OCCLUSION_THRESHOLD,
    BoxAnnotation,
    FlowField,
    FrameState,
    depth_image,
    detection_boxes,
    flow_field,
    instance_image,
    semantic_image,
)
from vtds.core.semantics import SemanticClass
from vtds.core.simulation import Simulation

logger = logging.getLogger(__name__)


@dataclass
class FrameBundle:
    index: int
    time: float
    rgb: np.ndarray
    semantic_ids: np.ndarray
    semantic_rgb: np.ndarray
    instances: np.ndarray
    depth: np.ndarray
    flow: FlowField
    boxes: List[BoxAnnotation]
    camera: Camera
    environment: EnvironmentState

    @property
    def shape(self) -> Tuple[int, int]:
        return self.rgb.shape[:2]


@dataclass
class RunStats:
    frames: int = 0
    class_pixels: Counter = field(default_factory=Counter)
    class_boxes: Counter = field(default_factory=Counter)
    flow_overflow: int = 0
    elapsed: float = 0.0

    @property
    def fps(self) -> float:
        return self.frames / self.elapsed if self.elapsed > 0 else 0.0

    def as_dict(self) -> dict:
        labels = {c.value: c.label for c in SemanticClass}
        return {
            "frame_count": self.frames,
            "class_pixel_counts": {labels[c.value]: int(self.class_pixels[c.value]) for c in SemanticClass},
            "class_box_counts": {labels[c.value]: int(self.class_boxes[c.value]) for c in SemanticClass},
            "flow_overflow_pixels": self.flow_overflow,
        }


class DataCollector:
    def __init__(self, simulation: "Simulation", occlusion_threshold: float = OCCLUSION_THRESHOLD) -> None:
        """
        Initialize the DataCollector with a built simulation.

        :param simulation: The simulation frames are rendered from.
        :param occlusion_threshold: Boxes with a larger occlusion rate are dropped.
        """
        self.simulation = simulation
        self.occlusion_threshold = occlusion_threshold
        self.stats = RunStats()
        self.metadata = simulation.get_params()
        self._previous: Optional[Tuple[int, FrameState, Camera]] = None

    def _previous_frame(self, index: int) -> Tuple[FrameState, Camera]:
        if self._previous is not None and self._previous[0] == index - 1:
            return self._previous[1], self._previous[2]
        return self.simulation.frame_state(index - 1), self.simulation.camera_at(index - 1)

    def collect_frame(self, index: int) -> FrameBundle:
        """
        Render frame ``index``, derive every ground-truth modality and add the
        frame to the run statistics.
        """
        bundle = self.render_bundle(index)
        self.collect_stats(bundle)
        return bundle

    def render_bundle(self, index: int) -> FrameBundle:
        """
        Render frame ``index`` and derive every ground-truth modality without
        touching the statistics. Frame 0 has no predecessor, so its flow is
        entirely invalid.
        """
        rendered = self.simulation.render(index)
        g, camera = rendered.gbuffer, rendered.camera
        h, w = g.shape

        if index == 0:
            flow = FlowField.invalid(h, w)
        else:
            previous_state, previous_camera = self._previous_frame(index)
            flow = flow_field(g, rendered.state, previous_state, camera, previous_camera)
        self._previous = (index, rendered.state, camera)

        ids, palette_rgb = semantic_image(g)
        boxes = detection_boxes(rendered.state, g, camera, self.occlusion_threshold)
        bundle = FrameBundle(
            index=index,
            time=rendered.state.time,
            rgb=rendered.rgb,
            semantic_ids=ids,
            semantic_rgb=palette_rgb,
            instances=instance_image(g),
            depth=depth_image(g, camera.intrinsics.near),
            flow=flow,
            boxes=boxes,
            camera=camera,
            environment=rendered.environment,
        )
        return bundle

    def collect_stats(self, bundle: FrameBundle) -> None:
        self.stats.frames += 1
        values, counts = np.unique(bundle.semantic_ids, return_counts=True)
        self.stats.class_pixels.update(dict(zip(values.tolist(), counts.tolist())))
        self.stats.class_boxes.update(box.class_id for box in bundle.boxes)
