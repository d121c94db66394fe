"""Discrete-event model of the capture -> inference -> pose pipeline.

Frames arrive at exact ``k / fps`` instants and a single inference server
takes them one at a time. Under ``drop`` a frame arriving while the server is
busy is discarded; under ``block`` the camera pauses and resumes at the first
schedule instant not earlier than the completion. An arrival at the
completion instant (within :data:`SCHEDULE_EPS`) is accepted.
"""

import csv
import logging
import math
import statistics
from collections.abc import Iterator
from pathlib import Path

import numpy as np
import simpy

from src.core.errors import InvalidArgumentError
from src.schemas.runtime import DropPolicy
from src.schemas.sim import (
    ReplayReport,
    ReplayStudy,
    RouteSpec,
    ServiceKind,
    ServiceModel,
    SimReport,
    SimScenario,
)
from src.services.fusion_eval import gen_trajectory
from src.services.pose import Trajectory, load_trajectory_csv

logger = logging.getLogger(__name__)

SCHEDULE_EPS = 1e-9


def arrival_count(fps: float, duration_s: float) -> int:
    """Number of schedule instants ``k / fps`` strictly before ``duration_s``."""
    return max(0, math.ceil(duration_s * fps - SCHEDULE_EPS))


def first_instant_at_or_after(t: float, fps: float) -> int:
    """Smallest ``k`` with ``k / fps >= t`` (boundary-tolerant)."""
    return max(0, math.ceil(t * fps - SCHEDULE_EPS))


def service_times(model: ServiceModel) -> Iterator[float]:
    """Endless stream of service times; lognormal draws come from a seeded PCG64."""
    if model.kind == ServiceKind.CONSTANT or model.sigma == 0:
        while True:
            yield model.mean_s
    rng = np.random.default_rng(model.seed)
    # mean of exp(N(mu, sigma^2)) is exp(mu + sigma^2/2)
    mu = math.log(model.mean_s) - model.sigma**2 / 2
    while True:
        yield float(rng.lognormal(mu, model.sigma))


class _Pipeline:
    """simpy processes for the camera and the single inference server."""

    def __init__(self, env: simpy.Environment, scenario: SimScenario):
        self.env = env
        self.scenario = scenario
        self.n_arrivals = arrival_count(scenario.fps, scenario.duration_s)
        self.services = service_times(scenario.service)
        self.busy_until = -math.inf
        self.captured = 0
        self.dropped = 0
        self.accepted: list[int] = []
        self.drawn: list[float] = []
        self.completions: list[float] = []

    def _instant(self, k: int) -> float:
        return k / self.scenario.fps

    def _wait_until(self, t: float) -> simpy.Timeout:
        return self.env.timeout(max(0.0, t - self.env.now))

    def _accept(self, k: int) -> float:
        service = next(self.services)
        self.captured += 1
        self.accepted.append(k)
        self.drawn.append(service)
        self.busy_until = self._instant(k) + service
        self.env.process(self._serve(self.busy_until))
        return self.busy_until

    def _serve(self, done_at: float) -> Iterator[simpy.Event]:
        yield self._wait_until(done_at)
        self.completions.append(done_at)

    def drop_source(self) -> Iterator[simpy.Event]:
        for k in range(self.n_arrivals):
            t = self._instant(k)
            yield self._wait_until(t)
            if t + SCHEDULE_EPS >= self.busy_until:
                self._accept(k)
            else:
                self.captured += 1
                self.dropped += 1

    def block_source(self) -> Iterator[simpy.Event]:
        k = 0
        while k < self.n_arrivals:
            yield self._wait_until(self._instant(k))
            done_at = self._accept(k)
            yield self._wait_until(done_at)
            k = max(k + 1, first_instant_at_or_after(done_at, self.scenario.fps))


def load_route(spec: RouteSpec) -> Trajectory:
    """Route from a trajectory CSV, or a circle of ``samples`` evenly spaced poses."""
    if spec.csv is not None:
        return load_trajectory_csv(spec.csv)
    assert spec.loop_length_m is not None and spec.samples is not None
    return gen_trajectory(
        radius_m=spec.loop_length_m / (2 * math.pi),
        speed_mps=spec.loop_length_m / spec.samples,
        fps=1.0,
        duration_s=float(spec.samples),
    )


def simulate_realtime(scenario: SimScenario, route: Trajectory | None = None) -> SimReport:
    """Run one scenario to completion; accepted frames always finish."""
    if route is None and scenario.route_csv is not None:
        route = load_trajectory_csv(scenario.route_csv)
    env = simpy.Environment()
    pipeline = _Pipeline(env, scenario)
    if route is not None and len(route) < pipeline.n_arrivals:
        raise InvalidArgumentError(
            f"route has {len(route)} samples, scenario captures {pipeline.n_arrivals}"
        )
    if scenario.policy == DropPolicy.DROP:
        env.process(pipeline.drop_source())
    else:
        env.process(pipeline.block_source())
    env.run()

    covered = None
    if route is not None and pipeline.accepted:
        covered = covered_distance(route, pipeline.accepted[-1] + 1)
    report = SimReport(
        label=scenario.label,
        policy=scenario.policy,
        frames_captured=pipeline.captured,
        poses_produced=len(pipeline.completions),
        frames_dropped=pipeline.dropped,
        pose_timestamps=sorted(pipeline.completions),
        covered_distance_m=covered,
        mean_service_s=statistics.fmean(pipeline.drawn) if pipeline.drawn else 0.0,
        median_service_s=statistics.median(pipeline.drawn) if pipeline.drawn else 0.0,
    )
    logger.debug("%s: %d poses, %d dropped", scenario.label, report.poses_produced,
                 report.frames_dropped)
    return report


def covered_distance(route: Trajectory, n_processed: int) -> float:
    """Polyline length through the first ``n_processed`` route samples."""
    if not 1 <= n_processed <= len(route):
        raise InvalidArgumentError(
            f"n_processed must be in 1..{len(route)}, got {n_processed}"
        )
    positions = route.positions[:n_processed]
    return float(np.linalg.norm(np.diff(positions, axis=0), axis=1).sum())


def simulate_replay(frame_count: int, per_frame_s: float, wall_time_s: float,
                    route: Trajectory, label: str = "") -> ReplayReport:
    """Sequential replay of a logged sequence within a wall-time budget."""
    if frame_count < 1 or per_frame_s <= 0 or wall_time_s <= 0:
        raise InvalidArgumentError("frame_count, per_frame_s and wall_time_s must be positive")
    if len(route) < frame_count:
        raise InvalidArgumentError(f"route has {len(route)} samples, need {frame_count}")
    fits = math.floor(wall_time_s / per_frame_s + SCHEDULE_EPS)
    processed = max(1, min(frame_count, fits))
    return ReplayReport(
        label=label,
        frame_count=frame_count,
        per_frame_s=per_frame_s,
        wall_time_s=wall_time_s,
        processed=processed,
        covered_distance_m=covered_distance(route, processed),
    )


def run_replay_study(study: ReplayStudy) -> list[ReplayReport]:
    """Every run at every wall budget, in config order."""
    route = load_route(study.route)
    return [
        simulate_replay(study.frame_count, run.per_frame_s, wall, route, label=run.label)
        for wall in study.wall_times_s
        for run in study.runs
    ]


# Output ----------------------------------------------------------------------


def write_sim_report(report: SimReport, directory: Path) -> None:
    """``<label>_report.csv`` (metric,value) and ``<label>_poses.csv``."""
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / f"{report.label}_report.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for metric, value in report.model_dump(mode="json").items():
            writer.writerow([metric, "" if value is None else value])
    with (directory / f"{report.label}_poses.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pose_index", "timestamp"])
        for i, t in enumerate(report.pose_timestamps):
            writer.writerow([i, repr(t)])


def write_coverage_csv(reports: list[ReplayReport], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "per_frame_s", "wall_time_s", "processed", "covered_distance_m"])
        for r in reports:
            writer.writerow([r.label, r.per_frame_s, r.wall_time_s, r.processed,
                             f"{r.covered_distance_m:.6f}"])
