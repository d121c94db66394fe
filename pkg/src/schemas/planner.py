"""Split planner schemas."""

import math

from pydantic import ConfigDict, Field, computed_field, field_validator

from src.schemas.base import ConfigSchema, ReportSchema

RESPONSE_FRAME_BYTES = 56


class CostProfile(ConfigSchema):
    """Client/server compute rates, link bandwidth and fixed overheads."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    c_client: float = Field(..., ge=0, description="Device seconds per GFLOP")
    c_server: float = Field(..., ge=0, description="Server seconds per GFLOP")
    bandwidth: float = Field(..., gt=0, description="Uplink bytes per second")
    rtt_overhead: float = Field(0.0, ge=0, description="Fixed seconds per request")
    preprocess: float = Field(0.0, ge=0, description="Seconds per frame")
    response_bytes: int = Field(RESPONSE_FRAME_BYTES, ge=0)

    @property
    def inverse_bandwidth(self) -> float:
        """Seconds per byte; zero for an unlimited link."""
        return 0.0 if math.isinf(self.bandwidth) else 1.0 / self.bandwidth

    def scaled(self, factor: float) -> "CostProfile":
        """Scale every time term by ``factor`` (bandwidth is divided)."""
        return CostProfile(
            c_client=self.c_client * factor,
            c_server=self.c_server * factor,
            bandwidth=self.bandwidth / factor,
            rtt_overhead=self.rtt_overhead * factor,
            preprocess=self.preprocess * factor,
            response_bytes=self.response_bytes,
        )


class CutMeasurement(ConfigSchema):
    """Measured per-frame latency at one cut."""

    cut_name: str
    mean_latency: float = Field(..., gt=0)
    single_frame: float | None = Field(None, gt=0)

    @field_validator("cut_name")
    @classmethod
    def validate_cut_name(cls, v: str) -> str:
        """Cut names are matched case-insensitively."""
        return v.lower()


class SplitPlan(ReportSchema):
    """Predicted latency per cut and the resulting ranking."""

    predicted: dict[str, float]
    ranking: list[str]

    @computed_field
    @property
    def best_cut(self) -> str:
        return self.ranking[0]


class CalibrationResult(ReportSchema):
    """Fitted profile plus fit diagnostics."""

    profile: CostProfile
    fixed_constant_s: float
    overhead_s: float
    delta_rate: float
    residuals: dict[str, float]
    residual_norm: float
    spearman_rho: float
    iterations_budget: int
    notes: list[str] = []
