"""Per-cut latency model, calibration against measurements, and cut selection."""

import csv
import logging
import math
from collections.abc import Sequence
from pathlib import Path

import numpy as np
from scipy.optimize import nnls
from scipy.stats import spearmanr

from src.core.errors import (
    DegenerateFitError,
    InsufficientDataError,
    InvalidArgumentError,
    ParseError,
)
from src.schemas.planner import (
    RESPONSE_FRAME_BYTES,
    CalibrationResult,
    CostProfile,
    CutMeasurement,
    SplitPlan,
)
from src.services.dnn_graph import LayerGraph, count_flops, cut_payload_bytes

logger = logging.getLogger(__name__)

MIN_MEASURED_CUTS = 5
SINGLE_FRAME_WEIGHT = 0.25
MAX_ITERATIONS = 10_000
BYTES_SCALE = 1e6  # fit in megabytes for conditioning


def predict_latency(graph: LayerGraph, profile: CostProfile, cut: str) -> float:
    """Modelled end-to-end seconds per frame when splitting at ``cut``."""
    flops = count_flops(graph)
    if cut not in graph.cut_points:
        raise InvalidArgumentError(f"unknown cut {cut!r}")
    inv_bw = profile.inverse_bandwidth
    return (
        profile.preprocess
        + profile.c_client * flops.prefix_gflops(cut)
        + profile.rtt_overhead
        + cut_payload_bytes(graph, cut) * inv_bw
        + profile.c_server * flops.suffix_gflops(cut)
        + profile.response_bytes * inv_bw
    )


def plan(graph: LayerGraph, profile: CostProfile) -> SplitPlan:
    """Evaluate every cut and rank ascending; ties go to the earlier cut."""
    predicted = {cut: predict_latency(graph, profile, cut) for cut in graph.cut_points}
    order = list(graph.cut_points)
    ranking = sorted(order, key=lambda cut: (predicted[cut], order.index(cut)))
    return SplitPlan(predicted=predicted, ranking=ranking)


def _design_rows(graph: LayerGraph, measurements: Sequence[CutMeasurement],
                 include_single_frame: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    flops = count_flops(graph)
    rows, targets, weights = [], [], []
    for m in measurements:
        features = [1.0, flops.prefix_gflops(m.cut_name),
                    cut_payload_bytes(graph, m.cut_name) / BYTES_SCALE]
        rows.append(features)
        targets.append(m.mean_latency)
        weights.append(1.0)
        if include_single_frame and m.single_frame is not None:
            rows.append(features)
            targets.append(m.single_frame)
            weights.append(SINGLE_FRAME_WEIGHT)
    return np.array(rows), np.array(targets), np.array(weights)


def calibrate(
    graph: LayerGraph,
    measurements: Sequence[CutMeasurement],
    overhead_s: float = 0.0,
    include_single_frame: bool = False,
    response_bytes: int = RESPONSE_FRAME_BYTES,
) -> CalibrationResult:
    """Fit a cost profile to measured per-cut latencies.

    Because prefix and suffix FLOPs always sum to the network total, only
    ``T = A + delta * prefix_gflops + inv_bw * bytes`` is identifiable from
    per-cut timings. The fit solves that reduced problem with nonnegative
    least squares and then splits ``A`` into ``c_server * total`` and the
    fixed per-frame overhead (rtt plus preprocessing), which must be given.
    """
    for m in measurements:
        if m.cut_name not in graph.cut_points:
            raise InvalidArgumentError(f"unknown cut {m.cut_name!r} in measurements")
    distinct = {m.cut_name for m in measurements}
    if len(distinct) < MIN_MEASURED_CUTS:
        raise InsufficientDataError(
            f"need at least {MIN_MEASURED_CUTS} distinct cuts, got {len(distinct)}"
        )
    if overhead_s < 0:
        raise InvalidArgumentError("overhead_s must be >= 0")

    x, y, w = _design_rows(graph, measurements, include_single_frame)
    sw = np.sqrt(w)
    xw, yw = x * sw[:, None], y * sw
    if np.linalg.matrix_rank(xw) < xw.shape[1]:
        raise DegenerateFitError("measured cuts do not separate compute from transfer")

    theta, _ = nnls(xw, yw, maxiter=MAX_ITERATIONS)
    fixed, delta, inv_bw_mb = (float(v) for v in theta)
    inv_bw = inv_bw_mb / BYTES_SCALE
    total_gflops = count_flops(graph).total / 1e9

    notes = [
        "rtt_overhead carries rtt and preprocessing together; they are not separable "
        "from per-cut timings",
    ]
    server_time = fixed - overhead_s - response_bytes * inv_bw
    if server_time < 0:
        notes.append(
            f"fitted constant {fixed:.6f}s is below the given overhead; c_server clamped to 0"
        )
        server_time = 0.0
    c_server = server_time / total_gflops
    profile = CostProfile(
        c_client=c_server + delta,
        c_server=c_server,
        bandwidth=math.inf if inv_bw == 0 else 1.0 / inv_bw,
        rtt_overhead=overhead_s,
        preprocess=0.0,
        response_bytes=response_bytes,
    )

    predicted = x @ theta
    means = [(m.cut_name, m.mean_latency) for m in measurements]
    mean_pred = {m.cut_name: float(predict_latency(graph, profile, m.cut_name))
                 for m in measurements}
    residuals = {cut: mean_pred[cut] - measured for cut, measured in means}
    residual_norm = float(np.linalg.norm((predicted - y) * sw))
    rho_value, _ = spearmanr([mean_pred[c] for c, _ in means], [v for _, v in means])
    rho = float(rho_value)
    logger.info(
        "calibrated profile: c_client=%.4g c_server=%.4g bandwidth=%.4g rho=%.3f",
        profile.c_client, profile.c_server, profile.bandwidth, rho,
    )
    return CalibrationResult(
        profile=profile,
        fixed_constant_s=fixed,
        overhead_s=overhead_s,
        delta_rate=delta,
        residuals=residuals,
        residual_norm=residual_norm,
        spearman_rho=rho,
        iterations_budget=MAX_ITERATIONS,
        notes=notes,
    )


def load_measurements_csv(path: Path | str) -> list[CutMeasurement]:
    """Read ``cut,mean_latency_s[,single_frame_s]`` rows; a header line is optional."""
    measurements: list[CutMeasurement] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row]
            if not cells or not any(cells):
                continue
            if lineno == 1 and cells[0].lower() == "cut":
                continue
            if len(cells) not in (2, 3):
                raise ParseError(f"expected 2 or 3 fields, got {len(cells)}", line=lineno)
            try:
                mean = float(cells[1])
                single = float(cells[2]) if len(cells) == 3 and cells[2] else None
                measurements.append(
                    CutMeasurement(cut_name=cells[0], mean_latency=mean, single_frame=single)
                )
            except ValueError as exc:
                raise ParseError(str(exc).splitlines()[0], line=lineno) from exc
    return measurements


def write_measurements_csv(measurements: Sequence[CutMeasurement], path: Path | str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cut", "mean_latency_s", "single_frame_s"])
        for m in measurements:
            single = "" if m.single_frame is None else f"{m.single_frame:.9g}"
            writer.writerow([m.cut_name, f"{m.mean_latency:.9g}", single])


def write_plan_csv(split_plan: SplitPlan, path: Path | str) -> None:
    """Write ``cut,predicted_s,rank`` in cut order."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rank = {cut: i + 1 for i, cut in enumerate(split_plan.ranking)}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cut", "predicted_s", "rank"])
        for cut, seconds in split_plan.predicted.items():
            writer.writerow([cut, f"{seconds:.9g}", rank[cut]])
