"""Synthetic routes, GPS/DNN-like corruption and the pose averaging study."""

import csv
import logging
import math
from collections.abc import Sequence
from pathlib import Path
from typing import Literal

import numpy as np

from src.core.errors import AlignmentError, InvalidArgumentError
from src.schemas.fusion import (
    STREAMS,
    FusionReport,
    FusionStudyConfig,
    HistogramBin,
    NoiseModel,
    StreamEvaluation,
    StreamSummary,
)
from src.services.pose import (
    Pose,
    Trajectory,
    fuse_pair,
    quat_from_axis_angle,
    translation_error,
)

logger = logging.getLogger(__name__)

TIMESTAMP_TOLERANCE = 1e-9
Z_AXIS = (0.0, 0.0, 1.0)


def gen_trajectory(radius_m: float, speed_mps: float, fps: float,
                   duration_s: float) -> Trajectory:
    """Counter-clockwise circle from (R, 0, 0), heading tangent to the motion."""
    if min(radius_m, speed_mps, fps, duration_s) <= 0:
        raise InvalidArgumentError("radius, speed, fps and duration must be positive")
    omega = speed_mps / radius_m
    n = max(1, math.ceil(duration_s * fps - TIMESTAMP_TOLERANCE))
    samples = []
    for k in range(n):
        t = k / fps
        angle = omega * t
        position = (radius_m * math.cos(angle), radius_m * math.sin(angle), 0.0)
        samples.append((t, Pose(position, quat_from_axis_angle(Z_AXIS, angle + math.pi / 2))))
    return Trajectory(tuple(samples))


def _corrupt_pose(pose: Pose, model: NoiseModel, rng: np.random.Generator) -> Pose:
    outlier = rng.random() < model.outlier_prob
    sigma = model.sigma_m * (model.outlier_scale if outlier else 1.0)
    dx, dy = rng.normal(0.0, sigma, size=2)
    t = (pose.t[0] + float(dx), pose.t[1] + float(dy), pose.t[2])
    q = pose.q
    if model.orientation_sigma_deg > 0:
        axis = rng.normal(size=3)
        angle = math.radians(float(rng.normal(0.0, model.orientation_sigma_deg)))
        q = (quat_from_axis_angle(axis, angle) * q).normalized()
    return Pose(t, q)


def corrupt(traj: Trajectory, model: NoiseModel) -> Trajectory:
    """Perturb every sample; frame ``k`` draws from ``default_rng((seed, k))``."""
    samples = tuple(
        (ts, _corrupt_pose(pose, model, np.random.default_rng((model.seed, k))))
        for k, (ts, pose) in enumerate(traj.samples)
    )
    return Trajectory(samples)


def _check_aligned(a: Trajectory, b: Trajectory) -> None:
    if len(a) != len(b):
        raise AlignmentError(f"trajectories have {len(a)} and {len(b)} samples")
    gap = np.abs(a.timestamps - b.timestamps)
    if len(gap) and float(gap.max()) > TIMESTAMP_TOLERANCE:
        frame = int(gap.argmax())
        raise AlignmentError(f"timestamps differ at frame {frame} by {float(gap[frame]):.3g}s")


def fuse_streams(a: Trajectory, b: Trajectory,
                 orientation: Literal["average", "second"] = "average") -> Trajectory:
    """Frame-wise average; ``orientation="second"`` keeps ``b``'s orientation."""
    _check_aligned(a, b)
    samples = []
    for (ts, pa), (_, pb) in zip(a.samples, b.samples, strict=True):
        if orientation == "second":
            fused = fuse_pair(Pose(pa.t, pb.q), pb)
            fused = Pose(fused.t, pb.q)
        else:
            fused = fuse_pair(pa, pb)
        samples.append((ts, fused))
    return Trajectory(tuple(samples))


def histogram_counts(losses: Sequence[float], bin_width: float,
                     n_bins: int | None = None) -> list[int]:
    """Counts in ``[i*w, (i+1)*w)``; the last bin is closed on the right."""
    values = np.asarray(losses, dtype=np.float64)
    if n_bins is None:
        n_bins = max(1, math.ceil(float(values.max(initial=0.0)) / bin_width))
    edges = np.arange(n_bins + 1, dtype=np.float64) * bin_width
    counts, _ = np.histogram(values, bins=edges)
    return [int(c) for c in counts]


def evaluate(est: Trajectory, gt: Trajectory, stream: str = "est",
             bin_width_m: float = 0.5) -> StreamEvaluation:
    """Per-frame translation error against ground truth with summary statistics."""
    _check_aligned(est, gt)
    losses = [translation_error(pe.t, pg.t) for pe, pg in zip(est.poses, gt.poses, strict=True)]
    arr = np.asarray(losses, dtype=np.float64)
    summary = StreamSummary(
        stream=stream,
        mean=float(arr.mean()) if len(arr) else 0.0,
        median=float(np.median(arr)) if len(arr) else 0.0,
        variance=float(arr.var()) if len(arr) else 0.0,
    )
    return StreamEvaluation(
        losses=losses,
        summary=summary,
        histogram=histogram_counts(losses, bin_width_m),
        bin_width_m=bin_width_m,
    )


def _shared_histogram(losses: dict[str, list[float]], bin_width: float) -> list[HistogramBin]:
    top = max(max(values, default=0.0) for values in losses.values())
    n_bins = max(1, math.ceil(top / bin_width))
    counts = {stream: histogram_counts(values, bin_width, n_bins)
              for stream, values in losses.items()}
    return [
        HistogramBin(
            bin_lo=i * bin_width,
            bin_hi=(i + 1) * bin_width,
            counts={stream: counts[stream][i] for stream in losses},
        )
        for i in range(n_bins)
    ]


def run_fusion_study(config: FusionStudyConfig) -> FusionReport:
    """Truth, two corrupted streams and their average, each scored against truth."""
    spec = config.trajectory
    truth = gen_trajectory(spec.radius_m, spec.speed_mps, spec.fps, spec.duration_s)
    gps = corrupt(truth, config.gps)
    dnn = corrupt(truth, config.dnn)
    fused = fuse_streams(gps, dnn, "second" if config.gps_orientation == "absent" else "average")
    evaluations = {
        "gps": evaluate(gps, truth, "gps", config.bin_width_m),
        "dnn": evaluate(dnn, truth, "dnn", config.bin_width_m),
        "fused": evaluate(fused, truth, "fused", config.bin_width_m),
    }
    losses = {stream: evaluations[stream].losses for stream in STREAMS}
    for stream in STREAMS:
        s = evaluations[stream].summary
        logger.info("%-5s mean=%.3f median=%.3f var=%.3f", stream, s.mean, s.median, s.variance)
    return FusionReport(
        losses=losses,
        summaries=[evaluations[stream].summary for stream in STREAMS],
        histogram=_shared_histogram(losses, config.bin_width_m),
    )


def _fmt(value: float) -> str:
    return repr(float(value))


def write_fusion_report(report: FusionReport, directory: Path) -> None:
    """``losses.csv``, ``summary.csv`` and ``hist.csv`` under ``directory``."""
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "losses.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", *STREAMS])
        columns = [report.losses[s] for s in STREAMS]
        for frame, row in enumerate(zip(*columns, strict=True)):
            writer.writerow([frame, *(_fmt(v) for v in row)])
    with (directory / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stream", "mean", "median", "variance"])
        for s in report.summaries:
            writer.writerow([s.stream, _fmt(s.mean), _fmt(s.median), _fmt(s.variance)])
    with (directory / "hist.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", *STREAMS])
        for b in report.histogram:
            writer.writerow([_fmt(b.bin_lo), _fmt(b.bin_hi), *(b.counts[s] for s in STREAMS)])
