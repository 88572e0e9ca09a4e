import argparse
import logging
import math
import multiprocessing
import os
import sys
import time
from collections import deque
from concurrent.futures import BrokenExecutor, ProcessPoolExecutor, ThreadPoolExecutor
from typing import Iterator, List, Optional, Tuple

import torch
from tqdm import tqdm

from vtds.config import ScenarioConfig, apply_overrides, config_hash, validate_config
from vtds.core.environment import Weather
from vtds.core.errors import ConfigError, ConfigIOError, VtdsError
from vtds.core.osm_map import parse_osm
from vtds.core.shape_grammar import parse_rules
from vtds.core.simulation import Simulation
from vtds.data_handling.data_collector import DataCollector, FrameBundle
from vtds.data_handling.data_exporter import DatasetWriter, write_manifest
from vtds.data_handling.visualization import Visualization

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as handle:
        return handle.read()


def build_simulation(config: ScenarioConfig) -> Simulation:
    """
    Map ingest, procedural modeling and vehicle placement for a validated config.
    """
    map_data = parse_osm(_read(config.map_path))
    program = parse_rules(_read(config.rules_path))
    simulation = (
        Simulation(seed=config.seed, frame_rate=config.capture.frame_rate)
        .add_map(map_data, tuple(config.map.origin))
        .add_rules(program)
        .add_props(config.prop_policy())
        .add_vehicles(config.census())
        .add_camera(config.rig())
        .add_environment(config.schedule())
        .build()
    )
    report = simulation.network.report
    logger.info(
        "Map: %d segments, %d footprints, %d junctions, %d ways skipped.",
        report.n_segments, report.n_footprints, len(simulation.network.junctions), report.n_skipped,
    )
    return simulation


# Frames rendered per task handed to a worker process; consecutive frames let a
# worker reuse its previous frame for optical flow.
FRAMES_PER_TASK = 8

_worker_collector: Optional[DataCollector] = None


def _start_worker(config: ScenarioConfig) -> None:
    global _worker_collector
    torch.set_num_threads(1)
    _worker_collector = DataCollector(build_simulation(config), config.capture.occlusion_threshold)


def _render_frames(indices: range) -> List[FrameBundle]:
    return [_worker_collector.render_bundle(index) for index in indices]


def frame_bundles(
    config: ScenarioConfig, collector: DataCollector, frames: int, workers: int = 1
) -> Iterator[FrameBundle]:
    """
    Bundles of frames ``0 .. frames - 1`` in order. With several workers, blocks
    of consecutive frames are rendered in worker processes that each build
    their own copy of the simulation; at most ``2 * workers`` blocks are in
    flight.
    """
    if workers <= 1:
        for index in range(frames):
            yield collector.render_bundle(index)
        return
    blocks = deque(range(start, min(start + FRAMES_PER_TASK, frames)) for start in range(0, frames, FRAMES_PER_TASK))
    context = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(workers, mp_context=context, initializer=_start_worker, initargs=(config,)) as pool:
        pending = deque()
        while blocks or pending:
            while blocks and len(pending) < 2 * workers:
                pending.append(pool.submit(_render_frames, blocks.popleft()))
            yield from pending.popleft().result()


def run_pipeline(config: ScenarioConfig, threads: int = 1, progress: bool = True) -> Tuple[str, str, float]:
    """
    Generate the full dataset for a validated config.

    :param threads: Render worker processes and PNG encoding threads.
    :return: The output directory, the manifest path and the measured fps.
    """
    workers = max(1, threads)
    torch.set_num_threads(workers)
    simulation = build_simulation(config)
    collector = DataCollector(simulation, config.capture.occlusion_threshold)
    out_dir = config.output_dir
    k = config.intrinsics()
    frames = config.capture.frames

    start = time.perf_counter()
    with DatasetWriter(out_dir, (k.width, k.height)) as writer, ThreadPoolExecutor(max_workers=workers) as pool:
        in_flight = deque()
        bundles = frame_bundles(config, collector, frames, workers)
        for bundle in tqdm(bundles, total=frames, desc="frames", unit="frame", disable=not progress):
            collector.collect_stats(bundle)
            in_flight.append(pool.submit(writer.write_frame_bundle, bundle))
            if len(in_flight) > 2 * workers:
                in_flight.popleft().result()
        for future in in_flight:
            future.result()
    elapsed = time.perf_counter() - start
    collector.stats.elapsed = elapsed
    collector.stats.flow_overflow = writer.flow_overflow

    fps = collector.stats.fps
    manifest = write_manifest(
        config.to_dict(),
        config_hash(config),
        collector.stats.as_dict(),
        out_dir,
        fps,
        vehicle_count=len(simulation.trajectories),
    )
    logger.info("Wrote %d frames to %s.", frames, out_dir)
    print(f"Generated {frames} frames in {elapsed:.2f} s ({fps:.2f} fps)")
    return out_dir, manifest, fps


def preview_frame(config: ScenarioConfig, t: float, threads: int = 1) -> FrameBundle:
    """
    Render the single frame shown at time ``t`` with every modality, plus a
    box overlay figure ``preview_boxes.png``.

    :raises ConfigError: If ``t`` is outside the capture.
    """
    rate = config.capture.frame_rate
    index = int(math.floor(t * rate + 1e-9))
    if t < 0 or index >= config.capture.frames:
        duration = config.capture.frames / rate
        raise ConfigError([f"--time: {t} s is outside the capture [0, {duration}) s."])
    torch.set_num_threads(max(1, threads))
    simulation = build_simulation(config)
    bundle = DataCollector(simulation, config.capture.occlusion_threshold).collect_frame(index)
    k = config.intrinsics()
    with DatasetWriter(config.output_dir, (k.width, k.height), require_contiguous=False) as writer:
        writer.write_frame_bundle(bundle)
    Visualization(bundle).save(os.path.join(config.output_dir, "preview_boxes.png"))
    print(f"Preview of frame {index} (t = {index / rate:.2f} s) written to {config.output_dir}")
    return bundle


def _hour(text: str):
    try:
        return float(text)
    except ValueError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vtds", description="Synthetic urban traffic dataset generator.")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log debug messages.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="Scenario YAML document.")
        p.add_argument("--seed", type=int, help="Override the config seed.")
        p.add_argument("--frames", type=int, help="Override the frame count.")
        p.add_argument("--weather", help=f"Override the weather ({', '.join(Weather.names())}).")
        p.add_argument(
            "--time-of-day", type=_hour, help="Override the start hour, in [0, 24), or dawn, noon or dusk."
        )
        p.add_argument("--yaw-offset", type=float, help="Override the onboard camera yaw offset, degrees.")
        p.add_argument("--threads", type=int, default=1, help="Render worker processes and PNG encoding threads.")
        p.add_argument("--output", help="Output directory (default: $VTDS_OUTPUT_ROOT/<config name>).")

    common(sub.add_parser("validate", help="Check a scenario and list every violation."))
    common(sub.add_parser("run", help="Generate the dataset."))
    preview = sub.add_parser("preview", help="Render one frame for inspection.")
    common(preview)
    preview.add_argument("--time", type=float, default=0.0, help="Capture time in seconds.")
    return parser


def _configure(args) -> ScenarioConfig:
    config = validate_config(args.config)
    return apply_overrides(
        config,
        seed=args.seed,
        frames=args.frames,
        weather=args.weather,
        time_of_day=args.time_of_day,
        output=args.output,
        yaw_offset=args.yaw_offset,
    )


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _configure(args)
        if args.command == "validate":
            print(f"{args.config}: valid (config hash {config_hash(config)[:12]})")
        elif args.command == "run":
            run_pipeline(config, threads=args.threads)
        else:
            preview_frame(config, args.time, threads=args.threads)
    except (ConfigError, ConfigIOError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VtdsError, ValueError, OSError, BrokenExecutor) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
