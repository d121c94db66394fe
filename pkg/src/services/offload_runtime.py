"""Live split inference: server-side request handling, the offload client and the capture loop."""

import asyncio
import csv
import itertools
import logging
import math
import statistics
import time
from collections.abc import Callable
from pathlib import Path
from typing import TypeVar

import httpx
import numpy as np
import numpy.typing as npt

from src.core.errors import (
    ConnectionLostError,
    DataValidationError,
    InvalidArgumentError,
    NumericError,
    ProtocolError,
    RemoteExecutionError,
    ShapeError,
    SplitLocError,
)
from src.schemas.planner import RESPONSE_FRAME_BYTES, CutMeasurement
from src.schemas.runtime import (
    LOCAL_CUT,
    ClientConfig,
    DropPolicy,
    FrameOutcome,
    FrameTiming,
    RunReport,
)
from src.schemas.wire import InferRequest, InferResponse, WireStatus
from src.services.dnn_graph import CUT_NAMES, cut_payload_bytes
from src.services.executor import ModelBundle, PoseEstimate, Tensor, preprocess
from src.services.pipeline_sim import (
    SCHEDULE_EPS,
    arrival_count,
    covered_distance,
    first_instant_at_or_after,
)
from src.services.pose import Trajectory, load_matrix_sequence, load_trajectory_csv
from src.services.protocol import decode_request, decode_response, encode_request, encode_response

logger = logging.getLogger(__name__)

INFER_PATH = "/api/v1/infer"
OCTET_STREAM = "application/octet-stream"
FRAME_ASPECT = (4, 3)

T = TypeVar("T")


# Server ----------------------------------------------------------------------


def _throttle(started: float, gflops: float, s_per_gflop: float) -> None:
    """Sleep until ``gflops`` have taken at least ``s_per_gflop`` each."""
    remaining = started + gflops * s_per_gflop - time.perf_counter()
    if remaining > 0:
        time.sleep(remaining)


def _run_request(
    model: ModelBundle, request: InferRequest
) -> tuple[WireStatus, PoseEstimate | None]:
    if request.cut_index >= len(CUT_NAMES):
        return WireStatus.BAD_CUT, None
    cut = CUT_NAMES[request.cut_index]
    expected = model.graph.activation_shape(model.graph.cut_index(cut))
    if tuple(request.shape) != expected:
        return WireStatus.SHAPE_MISMATCH, None
    try:
        return WireStatus.OK, model.run_suffix(request.tensor(), cut)
    except ShapeError:
        return WireStatus.SHAPE_MISMATCH, None
    except NumericError as e:
        logger.warning("request %d: %s", request.request_id, e)
        return WireStatus.INTERNAL, None


def handle_frame(model: ModelBundle, data: bytes, throttle_s_per_gflop: float = 0.0) -> bytes:
    """Decode one request frame, run the suffix and return the encoded response.

    Raises :class:`ProtocolError` when the frame itself is unreadable; every
    other failure is reported through the response status.
    """
    request = decode_request(data)
    started = time.perf_counter()
    start_ns = time.perf_counter_ns()
    try:
        status, estimate = _run_request(model, request)
    except Exception:
        logger.exception("request %d failed", request.request_id)
        status, estimate = WireStatus.INTERNAL, None
    if status == WireStatus.OK and throttle_s_per_gflop > 0:
        cut = CUT_NAMES[request.cut_index]
        _throttle(started, model.flops.suffix_gflops(cut), throttle_s_per_gflop)
    elapsed_ns = time.perf_counter_ns() - start_ns
    if status != WireStatus.OK:
        logger.warning("request %d answered with status %s", request.request_id, status.name)
    response = InferResponse(
        request_id=request.request_id,
        status=status,
        pose=tuple(float(v) for v in estimate.values) if estimate is not None else None,
        server_compute_ns=elapsed_ns,
    )
    return encode_response(response)


# Frame sources ---------------------------------------------------------------


def seeded_frame(seed: int, frame_id: int, resolution: int) -> npt.NDArray[np.uint8]:
    """Uniform 8-bit noise frame, 4:3 landscape, keyed by (seed, frame_id)."""
    width = resolution * FRAME_ASPECT[0] // FRAME_ASPECT[1]
    rng = np.random.default_rng((seed, frame_id))
    return rng.integers(0, 256, size=(resolution, width, 3), dtype=np.uint8)


class FrameSource:
    """Deterministic frames for the capture loop.

    ``seeded`` frames are uniform 8-bit noise keyed by (seed, frame_id);
    ``dir`` frames are ``.npy`` arrays read in sorted order and cycled;
    ``traj`` frames are seeded noise, each tagged with one trajectory sample
    from a trajectory CSV or a directory of ``*.pose.txt`` matrices.
    """

    def __init__(self, config: ClientConfig, resolution: int):
        self.kind = config.source_kind
        self.seed = config.source_seed
        self.resolution = resolution
        self.route: Trajectory | None = None
        self._files: list[Path] = []
        path = config.source_path
        if self.kind == "dir":
            assert path is not None
            if not path.is_dir():
                raise InvalidArgumentError(f"frame directory {path} does not exist")
            self._files = sorted(path.glob("*.npy"))
            if not self._files:
                raise InvalidArgumentError(f"no .npy frames in {path}")
        elif self.kind == "traj":
            assert path is not None
            if path.is_dir():
                self.route = load_matrix_sequence(path, config.fps)
            else:
                self.route = load_trajectory_csv(path)

    @property
    def limit(self) -> int | None:
        """Number of frames the source can supply, if bounded."""
        return len(self.route) if self.route is not None else None

    def frame(self, frame_id: int) -> npt.NDArray[np.uint8]:
        if self.kind == "dir":
            path = self._files[frame_id % len(self._files)]
            frame = np.load(path, allow_pickle=False)
            if frame.dtype != np.uint8 or frame.ndim != 3 or frame.shape[2] != 3:
                raise DataValidationError(
                    f"{path.name}: expected HxWx3 uint8, got {frame.dtype} {frame.shape}"
                )
            return frame
        return seeded_frame(self.seed, frame_id, self.resolution)


# Client ----------------------------------------------------------------------


class OffloadClient:
    """Runs the on-device prefix and ships the activation to the offload server.

    Use as an async context manager; the underlying ``httpx.AsyncClient``
    keeps the connection alive between frames and reconnects on demand.
    """

    def __init__(
        self,
        model: ModelBundle,
        base_url: str,
        timeout_s: float = 30.0,
        throttle_s_per_gflop: float = 0.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ):
        self.model = model
        self.base_url = base_url
        self.timeout_s = timeout_s
        self.throttle_s_per_gflop = throttle_s_per_gflop
        self._transport = transport
        self._http: httpx.AsyncClient | None = None
        self._request_ids = itertools.count(1)

    async def __aenter__(self) -> "OffloadClient":
        self._http = httpx.AsyncClient(
            base_url=self.base_url,
            timeout=self.timeout_s,
            transport=self._transport,
        )
        return self

    async def __aexit__(self, *exc: object) -> None:
        if self._http is not None:
            await self._http.aclose()
            self._http = None

    def _compute(self, fn: Callable[[], T], gflops: float) -> T:
        started = time.perf_counter()
        result = fn()
        if self.throttle_s_per_gflop > 0:
            _throttle(started, gflops, self.throttle_s_per_gflop)
        return result

    async def infer_local(self, frame: npt.NDArray[np.uint8],
                          frame_id: int = 0) -> tuple[PoseEstimate, FrameTiming]:
        """Whole network on the device, no network round trip."""
        t0 = time.perf_counter()
        x = preprocess(frame, self.model.graph.resolution)
        t1 = time.perf_counter()
        estimate = await asyncio.to_thread(
            self._compute, lambda: self.model.run_full(x), self.model.flops.total / 1e9
        )
        t2 = time.perf_counter()
        return estimate, FrameTiming(
            frame_id=frame_id,
            capture_t=0.0,
            preprocess_s=t1 - t0,
            client_compute_s=t2 - t1,
            total_s=t2 - t0,
        )

    async def post_frame(self, body: bytes) -> bytes:
        """Send one encoded request and return the raw response body."""
        if self._http is None:
            raise InvalidArgumentError("client is not open; use 'async with'")
        try:
            reply = await self._http.post(
                INFER_PATH, content=body, headers={"content-type": OCTET_STREAM}
            )
        except httpx.TransportError as e:
            raise ConnectionLostError(f"{type(e).__name__}: {e}") from e
        if reply.status_code != 200:
            raise ProtocolError(f"server rejected frame: HTTP {reply.status_code} {reply.text}")
        return reply.content

    async def infer_once(self, cut: str, frame: npt.NDArray[np.uint8],
                         frame_id: int = 0) -> tuple[PoseEstimate, FrameTiming]:
        """Preprocess, run ``[null, cut)`` locally, offload the rest and decode the pose."""
        cut_index = CUT_NAMES.index(cut) if cut in CUT_NAMES else None
        if cut_index is None:
            raise InvalidArgumentError(f"unknown cut {cut!r}")
        t0 = time.perf_counter()
        x = preprocess(frame, self.model.graph.resolution)
        t1 = time.perf_counter()
        activation: Tensor = await asyncio.to_thread(
            self._compute,
            lambda: self.model.run_prefix(x, cut),
            self.model.flops.prefix_gflops(cut),
        )
        t2 = time.perf_counter()
        request_id = next(self._request_ids)
        body = encode_request(InferRequest.from_tensor(request_id, cut_index, activation))
        t3 = time.perf_counter()
        raw = await self.post_frame(body)
        t4 = time.perf_counter()
        response = decode_response(raw)
        t5 = time.perf_counter()
        if response.request_id != request_id:
            raise ProtocolError(f"response for request {response.request_id}, sent {request_id}")
        if response.status != WireStatus.OK or response.pose is None:
            raise RemoteExecutionError(int(response.status), request_id)
        server_s = response.server_compute_ns / 1e9
        estimate = PoseEstimate(np.asarray(response.pose, dtype=np.float32))
        return estimate, FrameTiming(
            frame_id=frame_id,
            capture_t=0.0,
            preprocess_s=t1 - t0,
            client_compute_s=t2 - t1,
            serialize_s=(t3 - t2) + (t5 - t4),
            transfer_s=max(0.0, (t4 - t3) - server_s),
            server_compute_s=min(server_s, t4 - t3),
            total_s=t5 - t0,
        )

    async def infer(self, cut: str, frame: npt.NDArray[np.uint8],
                    frame_id: int = 0) -> tuple[PoseEstimate, FrameTiming]:
        if cut == LOCAL_CUT:
            return await self.infer_local(frame, frame_id)
        return await self.infer_once(cut, frame, frame_id)


# Capture loop ----------------------------------------------------------------


class _RunAborted(Exception):
    pass


class CaptureLoop:
    """Fixed-schedule capture with at most one inference in flight.

    Under ``drop`` every schedule slot is a frame and a slot that finds the
    pipeline busy is dropped. Under ``block`` the source pauses: the next
    frame is taken at the first slot at or after the previous completion.
    ``frame_limit`` and bounded sources cap the frames actually taken.
    """

    def __init__(self, config: ClientConfig, client: OffloadClient, source: FrameSource):
        self.config = config
        self.client = client
        self.source = source
        self.timings: list[FrameTiming] = []
        self.poses: dict[int, PoseEstimate] = {}
        self.aborted = False
        self._start = 0.0
        self._busy_until: float | None = None

    def slot_count(self) -> int:
        return arrival_count(self.config.fps, self.config.duration_s)

    def frame_cap(self) -> int | None:
        bounds = [b for b in (self.config.frame_limit, self.source.limit) if b is not None]
        return min(bounds) if bounds else None

    def _instant(self, slot: int) -> float:
        return self._start + slot / self.config.fps

    async def _sleep_until(self, instant: float) -> None:
        while (delay := instant - time.perf_counter()) > 0:
            await asyncio.sleep(delay)

    async def _infer_with_retry(self, frame_id: int, slot: int) -> float:
        """Infer one frame captured at ``slot``; returns its completion time."""
        frame = self.source.frame(frame_id)
        capture_t = time.perf_counter() - self._start
        for attempt in range(self.config.retry_budget + 1):
            try:
                estimate, timing = await self.client.infer(self.config.cut, frame, frame_id)
                break
            except ConnectionLostError as e:
                if attempt == self.config.retry_budget:
                    logger.error("frame %d: giving up after %d retries: %s", frame_id, attempt, e)
                    raise _RunAborted from e
                logger.warning("frame %d: %s; retrying in %.2fs", frame_id, e,
                               self.config.retry_backoff_s)
                await asyncio.sleep(self.config.retry_backoff_s)
            except SplitLocError as e:
                logger.error("frame %d: %s", frame_id, e)
                raise _RunAborted from e
        # service time counts from the scheduled capture instant
        done = max(self._instant(slot) + self.config.min_inference_s, time.perf_counter())
        self._busy_until = done
        await self._sleep_until(done)
        self.poses[frame_id] = estimate
        self.timings.append(timing.model_copy(update={
            "capture_t": capture_t,
            "total_s": max(time.perf_counter() - self._instant(slot), timing.parts_s),
        }))
        return done

    def _record_drop(self, frame_id: int) -> None:
        self.timings.append(FrameTiming(
            frame_id=frame_id,
            capture_t=time.perf_counter() - self._start,
            outcome=FrameOutcome.DROPPED,
        ))

    def _free_by(self, instant: float) -> bool:
        return self._busy_until is not None and self._busy_until <= instant + SCHEDULE_EPS

    async def _run_drop(self, n_slots: int) -> None:
        in_flight: asyncio.Task[float] | None = None
        try:
            for k in range(n_slots):
                await self._sleep_until(self._instant(k))
                # an inference finishing exactly at this arrival frees the pipeline for it
                if in_flight is not None and (in_flight.done() or self._free_by(self._instant(k))):
                    await in_flight
                    in_flight = None
                if in_flight is not None:
                    self._record_drop(k)
                    continue
                self._busy_until = None
                in_flight = asyncio.create_task(self._infer_with_retry(k, k))
                # let the task start before the next arrival is considered
                await asyncio.sleep(0)
            if in_flight is not None:
                await in_flight
        finally:
            if in_flight is not None and not in_flight.done():
                in_flight.cancel()

    async def _run_block(self, n_slots: int, cap: int | None) -> None:
        slot = taken = 0
        while slot < n_slots and (cap is None or taken < cap):
            await self._sleep_until(self._instant(slot))
            done = await self._infer_with_retry(taken, slot)
            taken += 1
            slot = max(slot + 1, first_instant_at_or_after(done - self._start, self.config.fps))

    async def run(self) -> RunReport:
        n_slots, cap = self.slot_count(), self.frame_cap()
        target = "on-device" if self.config.is_local else self.config.server_url
        logger.info("capture loop: cut=%s (%s) fps=%g slots=%d cap=%s policy=%s",
                    self.config.cut, target, self.config.fps, n_slots, cap,
                    self.config.policy.value)
        self._start = time.perf_counter()
        try:
            if self.config.policy == DropPolicy.DROP:
                await self._run_drop(n_slots if cap is None else min(n_slots, cap))
            else:
                await self._run_block(n_slots, cap)
        except _RunAborted:
            self.aborted = True
        wall = time.perf_counter() - self._start
        return self.report(wall)

    def report(self, wall_s: float) -> RunReport:
        timings = sorted(self.timings, key=lambda t: t.frame_id)
        posed = [t for t in timings if t.outcome == FrameOutcome.POSE]
        latencies = [t.total_s for t in posed]
        covered = None
        if self.source.route is not None and posed:
            covered = covered_distance(self.source.route, posed[-1].frame_id + 1)
        return RunReport(
            cut=self.config.cut,
            policy=self.config.policy,
            frames_captured=len(timings),
            poses_produced=len(posed),
            frames_dropped=len(timings) - len(posed),
            mean_latency_s=statistics.fmean(latencies) if latencies else 0.0,
            median_latency_s=statistics.median(latencies) if latencies else 0.0,
            wall_s=wall_s,
            complete=not self.aborted,
            covered_distance_m=covered,
            timings=timings,
            poses=[tuple(float(v) for v in self.poses[t.frame_id].values) for t in posed],
        )


async def run_capture_loop(
    config: ClientConfig,
    model: ModelBundle,
    transport: httpx.AsyncBaseTransport | None = None,
) -> RunReport:
    """Capture frames on a fixed schedule and infer them one at a time."""
    source = FrameSource(config, model.graph.resolution)
    async with OffloadClient(
        model,
        config.server_url,
        timeout_s=config.timeout_s,
        throttle_s_per_gflop=config.throttle_s_per_gflop,
        transport=transport,
    ) as client:
        report = await CaptureLoop(config, client, source).run()
    logger.info(
        "run %s: captured=%d poses=%d dropped=%d mean=%.4fs",
        "complete" if report.complete else "INCOMPLETE",
        report.frames_captured, report.poses_produced, report.frames_dropped,
        report.mean_latency_s,
    )
    return report


TIMING_COLUMNS = tuple(FrameTiming.model_fields)


def write_timings_csv(report: RunReport, path: Path | str) -> None:
    """Per-frame timing CSV with one column per :class:`FrameTiming` field."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TIMING_COLUMNS)
        writer.writeheader()
        for timing in report.timings:
            writer.writerow(timing.model_dump(mode="json"))


# Local benchmark -------------------------------------------------------------


def bench_local(
    model: ModelBundle,
    cuts: list[str],
    frames: int = 100,
    source_seed: int = 0,
    client_s_per_gflop: float = 0.0,
    server_s_per_gflop: float = 0.0,
    bandwidth: float = math.inf,
    response_bytes: int = RESPONSE_FRAME_BYTES,
) -> list[CutMeasurement]:
    """Per-cut mean and first-frame latency of prefix + suffix run in-process.

    Device/server asymmetry and the link are emulated arithmetically: each
    side is charged at least its seconds-per-GFLOP floor, and the payload plus
    response cost ``bytes / bandwidth``.
    """
    if frames < 1:
        raise InvalidArgumentError("frames must be at least 1")
    if bandwidth <= 0:
        raise InvalidArgumentError("bandwidth must be positive")
    resolution = model.graph.resolution
    results = []
    for cut in cuts:
        link_s = 0.0
        if not math.isinf(bandwidth):
            link_s = (cut_payload_bytes(model.graph, cut) + response_bytes) / bandwidth
        client_floor = client_s_per_gflop * model.flops.prefix_gflops(cut)
        server_floor = server_s_per_gflop * model.flops.suffix_gflops(cut)
        times = []
        for frame_id in range(frames):
            frame = seeded_frame(source_seed, frame_id, resolution)
            t0 = time.perf_counter()
            x = preprocess(frame, resolution)
            t1 = time.perf_counter()
            activation = model.run_prefix(x, cut)
            t2 = time.perf_counter()
            model.run_suffix(activation, cut)
            t3 = time.perf_counter()
            times.append((t1 - t0) + max(t2 - t1, client_floor) + max(t3 - t2, server_floor)
                         + link_s)
        logger.info("bench %-8s mean=%.4fs first=%.4fs", cut, statistics.fmean(times), times[0])
        results.append(CutMeasurement(
            cut_name=cut, mean_latency=statistics.fmean(times), single_frame=times[0]
        ))
    return results
