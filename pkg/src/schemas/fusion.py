"""Fusion study schemas."""

from typing import Literal

from pydantic import Field

from src.schemas.base import ConfigSchema, ReportSchema

STREAMS = ("gps", "dnn", "fused")


class NoiseModel(ConfigSchema):
    """Horizontal Gaussian position noise with optional outliers and orientation jitter."""

    sigma_m: float = Field(..., ge=0)
    outlier_prob: float = Field(0.0, ge=0, le=1)
    outlier_scale: float = Field(1.0, ge=1)
    orientation_sigma_deg: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0)


class TrajectorySpec(ConfigSchema):
    """Circular ground-truth route driven at constant speed."""

    radius_m: float = Field(100.0, gt=0)
    speed_mps: float = Field(10.0, gt=0)
    fps: float = Field(10.0, gt=0)
    duration_s: float = Field(1000.0, gt=0)


def _gps_default() -> NoiseModel:
    return NoiseModel(sigma_m=7.0, seed=1)


def _dnn_default() -> NoiseModel:
    return NoiseModel(
        sigma_m=5.0, outlier_prob=0.05, outlier_scale=10.0, orientation_sigma_deg=5.0, seed=2
    )


class FusionStudyConfig(ConfigSchema):
    """GPS-like and DNN-like streams around one truth, averaged frame by frame.

    With ``gps_orientation="absent"`` the GPS stream carries no heading and the
    fused orientation is taken from the DNN stream.
    """

    trajectory: TrajectorySpec = Field(default_factory=TrajectorySpec)
    gps: NoiseModel = Field(default_factory=_gps_default)
    dnn: NoiseModel = Field(default_factory=_dnn_default)
    gps_orientation: Literal["absent", "present"] = "absent"
    bin_width_m: float = Field(0.5, gt=0)


class StreamSummary(ReportSchema):
    stream: str
    mean: float
    median: float
    variance: float


class StreamEvaluation(ReportSchema):
    """Per-frame translation losses of one stream against truth."""

    losses: list[float]
    summary: StreamSummary
    histogram: list[int]
    bin_width_m: float


class HistogramBin(ReportSchema):
    bin_lo: float
    bin_hi: float
    counts: dict[str, int]


class FusionReport(ReportSchema):
    """Losses, summaries and a shared-bin histogram for gps, dnn and fused."""

    losses: dict[str, list[float]]
    summaries: list[StreamSummary]
    histogram: list[HistogramBin]

    def summary(self, stream: str) -> StreamSummary:
        return next(s for s in self.summaries if s.stream == stream)
