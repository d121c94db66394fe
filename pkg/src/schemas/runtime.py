"""Offload runtime schemas."""

from enum import Enum
from pathlib import Path

from pydantic import Field, field_validator

from src.core.config import SUPPORTED_RESOLUTIONS
from src.schemas.base import ConfigSchema, ReportSchema
from src.services.dnn_graph import CUT_NAMES

LOCAL_CUT = "local"
SOURCE_KINDS = ("seeded", "dir", "traj")


class DropPolicy(str, Enum):
    """What the capture loop does with a frame that arrives while busy."""

    DROP = "drop"
    BLOCK = "block"


class FrameOutcome(str, Enum):
    POSE = "pose"
    DROPPED = "dropped"


class ServerConfig(ConfigSchema):
    """Offload server configuration."""

    host: str = "127.0.0.1"
    port: int = Field(8750, ge=0, le=65535)
    resolution: int = 224
    feature_dim: int = Field(2048, ge=8)
    seed: int = Field(42, ge=0, lt=2**64)
    max_sessions: int = Field(8, ge=1)
    throttle_s_per_gflop: float = Field(0.0, ge=0)
    log_level: str = "INFO"

    @field_validator("resolution")
    @classmethod
    def validate_resolution(cls, v: int) -> int:
        if v not in SUPPORTED_RESOLUTIONS:
            raise ValueError(f"resolution must be one of {SUPPORTED_RESOLUTIONS}")
        return v


class ClientConfig(ConfigSchema):
    """Capture loop configuration.

    ``source`` is ``seeded``, ``dir:PATH`` (sorted ``.npy`` frames) or
    ``traj:PATH`` (synthetic frames tagged with the poses of a trajectory
    CSV or a directory of ``*.pose.txt`` matrices, for route coverage).
    ``min_inference_s`` pads every inference to a fixed service time,
    counted from the frame's scheduled capture instant.
    """

    server_url: str = "http://127.0.0.1:8750"
    cut: str = "null"
    source: str = "seeded"
    source_seed: int = Field(0, ge=0)
    fps: float = Field(30.0, gt=0)
    duration_s: float = Field(10.0, gt=0)
    policy: DropPolicy = DropPolicy.DROP
    throttle_s_per_gflop: float = Field(0.0, ge=0)
    min_inference_s: float = Field(0.0, ge=0)
    frame_limit: int | None = Field(None, ge=1)
    timeout_s: float = Field(30.0, gt=0)
    retry_budget: int = Field(3, ge=0)
    retry_backoff_s: float = Field(0.1, ge=0)

    @field_validator("cut")
    @classmethod
    def validate_cut(cls, v: str) -> str:
        v = v.lower()
        if v != LOCAL_CUT and v not in CUT_NAMES:
            raise ValueError(f"unknown cut {v!r}; expected {LOCAL_CUT} or one of {CUT_NAMES}")
        return v

    @field_validator("source")
    @classmethod
    def validate_source(cls, v: str) -> str:
        kind, _, path = v.partition(":")
        if kind not in SOURCE_KINDS:
            raise ValueError(f"source must be seeded, dir:PATH or traj:PATH, got {v!r}")
        if kind == "seeded" and path:
            raise ValueError("seeded source takes no path")
        if kind != "seeded" and not path:
            raise ValueError(f"{kind} source needs a path")
        return v

    @property
    def source_kind(self) -> str:
        return self.source.partition(":")[0]

    @property
    def source_path(self) -> Path | None:
        path = self.source.partition(":")[2]
        return Path(path) if path else None

    @property
    def is_local(self) -> bool:
        return self.cut == LOCAL_CUT


class FrameTiming(ReportSchema):
    """Per-frame timing breakdown; dropped frames carry zeros."""

    frame_id: int
    capture_t: float
    preprocess_s: float = 0.0
    client_compute_s: float = 0.0
    serialize_s: float = 0.0
    transfer_s: float = 0.0
    server_compute_s: float = 0.0
    total_s: float = 0.0
    outcome: FrameOutcome = FrameOutcome.POSE

    @property
    def parts_s(self) -> float:
        return (self.preprocess_s + self.client_compute_s + self.serialize_s
                + self.transfer_s + self.server_compute_s)


class RunReport(ReportSchema):
    """Summary of one capture loop run."""

    cut: str
    policy: DropPolicy
    frames_captured: int
    poses_produced: int
    frames_dropped: int
    mean_latency_s: float
    median_latency_s: float
    wall_s: float
    complete: bool
    covered_distance_m: float | None = None
    timings: list[FrameTiming] = Field(default_factory=list, exclude=True)
    poses: list[tuple[float, ...]] = Field(default_factory=list, exclude=True)
