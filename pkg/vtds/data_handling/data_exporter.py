import csv
import logging
import os
import threading
from datetime import datetime, timezone
from typing import Dict, List, NamedTuple, Optional, Tuple

import h5py
import numpy as np
import yaml

from vtds.core.camera import Camera
from vtds.core.environment import EnvironmentState
from vtds.core.errors import DatasetWriteError
from vtds.core.ground_truth import BoxAnnotation
from vtds.core.semantics import SemanticClass
from vtds.data_handling.codecs import encode_depth, encode_flow, encode_instance, write_png
from vtds.data_handling.data_collector import FrameBundle

logger = logging.getLogger(__name__)

MODALITIES = ("rgb", "semantic_id", "semantic_rgb", "instance", "depth", "flow")
CSV_HEADER = (
    "frame",
    "track_id",
    "class_id",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
    "occlusion_rate",
    "truncated",
)
FORMAT_VERSIONS = {
    "dataset": 1,
    "rgb": "png-rgb8-v1",
    "semantic": "png-gray8-v1",
    "instance": "png-gray16-v1",
    "depth": "png-gray16-normalized-v1",
    "flow": "png-rgb16-kitti-v1",
    "annotations": "csv-v1",
    "frames": "hdf5-v1",
    "manifest": 1,
}


class FrameRecord(NamedTuple):
    index: int
    time: float
    camera: Camera
    environment: EnvironmentState


def frame_name(index: int) -> str:
    return f"{index:06d}.png"


def box_row(box: BoxAnnotation) -> List[str]:
    return [
        str(box.frame),
        str(box.track_id),
        str(box.class_id),
        f"{box.x_min:.6f}",
        f"{box.y_min:.6f}",
        f"{box.x_max:.6f}",
        f"{box.y_max:.6f}",
        f"{box.occlusion_rate:.6f}",
        "1" if box.truncated else "0",
    ]


class DatasetWriter:
    """
    Writes frame bundles into one directory per modality plus an
    ``annotations.csv`` and a ``frames.h5`` archive of per-frame camera and
    environment state.

    Images of different frames may be written from several threads; CSV rows
    are appended by a single writer in frame order, whatever order bundles
    arrive in.
    """

    def __init__(
        self, out_dir: str, resolution: Optional[Tuple[int, int]] = None, require_contiguous: bool = True
    ) -> None:
        """
        :param out_dir: Dataset root, created if missing.
        :param resolution: Expected (width, height); checked on every bundle.
        :param require_contiguous: Whether frame indices must run from 0 without gaps.
        """
        self.out_dir = os.fspath(out_dir)
        self.require_contiguous = require_contiguous
        self.resolution = resolution
        self.flow_overflow = 0
        self._lock = threading.Lock()
        self._pending: Dict[int, List[BoxAnnotation]] = {}
        self._next_row_frame = 0
        self._frames: Dict[int, FrameRecord] = {}
        try:
            for modality in MODALITIES:
                os.makedirs(os.path.join(self.out_dir, modality), exist_ok=True)
            self._csv_file = open(self.annotations_path, "w", newline="", encoding="utf-8")
        except OSError as exc:
            raise DatasetWriteError(f"Cannot create dataset directory ({exc.strerror})", self.out_dir) from exc
        self._csv = csv.writer(self._csv_file, lineterminator="\n")
        self._csv.writerow(CSV_HEADER)

    @property
    def annotations_path(self) -> str:
        return os.path.join(self.out_dir, "annotations.csv")

    @property
    def frames_path(self) -> str:
        return os.path.join(self.out_dir, "frames.h5")

    def __enter__(self) -> "DatasetWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close(finalize=exc_type is None)

    def write_frame_bundle(self, bundle: FrameBundle) -> List[str]:
        """
        Encode and write one bundle.

        :return: Paths of the six PNG files written.
        :raises DatasetWriteError: On a resolution mismatch or an I/O failure.
        """
        h, w = bundle.shape
        if self.resolution is not None and (w, h) != tuple(self.resolution):
            raise DatasetWriteError(
                f"Frame {bundle.index} has resolution {w}x{h}, expected "
                f"{self.resolution[0]}x{self.resolution[1]}",
                self.out_dir,
            )
        for name, image in (
            ("semantic_id", bundle.semantic_ids),
            ("semantic_rgb", bundle.semantic_rgb),
            ("instance", bundle.instances),
            ("depth", bundle.depth),
        ):
            if image.shape[:2] != (h, w):
                raise DatasetWriteError(f"Frame {bundle.index}: {name} image does not match the RGB size", self.out_dir)

        flow, overflow = encode_flow(bundle.flow)
        images = {
            "rgb": bundle.rgb,
            "semantic_id": bundle.semantic_ids.astype(np.uint8),
            "semantic_rgb": bundle.semantic_rgb,
            "instance": encode_instance(bundle.instances),
            "depth": encode_depth(bundle.depth),
            "flow": flow,
        }
        paths = []
        for modality in MODALITIES:
            path = os.path.join(self.out_dir, modality, frame_name(bundle.index))
            write_png(path, images[modality])
            paths.append(path)

        with self._lock:
            if overflow:
                logger.warning("Frame %d: %d flow vectors clamped.", bundle.index, overflow)
            self.flow_overflow += overflow
            self._frames[bundle.index] = FrameRecord(bundle.index, bundle.time, bundle.camera, bundle.environment)
            self._pending[bundle.index] = sorted(bundle.boxes, key=lambda b: b.track_id)
            self._flush_rows()
        return paths

    def _flush_rows(self) -> None:
        while self._next_row_frame in self._pending:
            for box in self._pending.pop(self._next_row_frame):
                self._csv.writerow(box_row(box))
            self._next_row_frame += 1

    def close(self, finalize: bool = True) -> None:
        """
        Flush annotations and, when ``finalize`` is set, write ``frames.h5``.

        :raises DatasetWriteError: If frame indices are not contiguous from 0.
        """
        if self._csv_file.closed:
            return
        for index in sorted(self._pending):
            for box in self._pending.pop(index):
                self._csv.writerow(box_row(box))
        self._csv_file.close()
        if not finalize:
            return
        indices = sorted(self._frames)
        if self.require_contiguous and indices != list(range(len(indices))):
            raise DatasetWriteError("Frame indices are not contiguous from 0", self.out_dir)
        self.write_frames_archive([self._frames[i] for i in indices])

    def write_frames_archive(self, bundles: List[FrameRecord]) -> None:
        """
        Store camera poses, intrinsics and environment states in HDF5.
        """
        n = len(bundles)
        try:
            with h5py.File(self.frames_path, "w") as file:
                if bundles:
                    k = bundles[0].camera.intrinsics
                    file.attrs["width"] = k.width
                    file.attrs["height"] = k.height
                    file.attrs["fov"] = k.fov
                    file.attrs["near"] = k.near
                    file.attrs["focal"] = k.focal
                file.attrs["frame_count"] = n

                gcpl = h5py.h5p.create(h5py.h5p.GROUP_CREATE)
                gcpl.set_obj_track_times(False)
                for group in (b"camera", b"environment"):
                    h5py.h5g.create(file.id, group, gcpl=gcpl)

                def dataset(name, data, dtype=None):
                    file.create_dataset(name, data=np.asarray(data, dtype=dtype), track_times=False)

                dataset("index", [b.index for b in bundles], np.int64)
                dataset("time", [b.time for b in bundles], np.float64)
                dataset("camera/position", np.reshape([b.camera.position for b in bundles], (n, 3)), np.float64)
                dataset("camera/rotation", np.reshape([b.camera.rotation for b in bundles], (n, 3, 3)), np.float64)
                env = [b.environment for b in bundles]
                dataset("environment/sun_direction", np.reshape([e.sun_direction for e in env], (n, 3)), np.float64)
                dataset("environment/sun_intensity", [e.sun_intensity for e in env], np.float64)
                dataset("environment/ambient", [e.ambient for e in env], np.float64)
                dataset("environment/fog_density", [e.fog_density for e in env], np.float64)
                dataset("environment/time_of_day", [e.time_of_day for e in env], np.float64)
                file.create_dataset(
                    "environment/weather",
                    data=np.array([e.weather.value for e in env], dtype=h5py.string_dtype()),
                    track_times=False,
                )
        except OSError as exc:
            raise DatasetWriteError(f"Cannot write frame archive ({exc})", self.frames_path) from exc


def palette_table() -> List[dict]:
    return [{"id": c.value, "name": c.label, "color": list(c.color)} for c in SemanticClass]


def write_manifest(
    config: dict,
    config_hash: str,
    stats: dict,
    out_dir: str,
    fps: float,
    vehicle_count: int,
) -> str:
    """
    Write ``manifest.yaml``. Everything but ``generated_at`` and
    ``throughput_fps`` is a deterministic function of the config.
    """
    manifest = {
        "format_version": FORMAT_VERSIONS["manifest"],
        "config_hash": config_hash,
        "seed": config.get("seed"),
        "frame_count": stats.get("frame_count", 0),
        "vehicle_count": vehicle_count,
        "palette": palette_table(),
        "class_pixel_counts": stats.get("class_pixel_counts", {}),
        "class_box_counts": stats.get("class_box_counts", {}),
        "flow_overflow_pixels": stats.get("flow_overflow_pixels", 0),
        "format_versions": FORMAT_VERSIONS,
        "config": config,
        "throughput_fps": round(float(fps), 3),
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = os.path.join(os.fspath(out_dir), "manifest.yaml")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(manifest, handle, sort_keys=False)
    except OSError as exc:
        raise DatasetWriteError(f"Cannot write manifest ({exc.strerror})", path) from exc
    return path
