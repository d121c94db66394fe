"""Pipeline simulation schemas."""

from enum import Enum
from pathlib import Path

from pydantic import Field, field_validator, model_validator

from src.schemas.base import ConfigSchema, ReportSchema
from src.schemas.runtime import DropPolicy


class ServiceKind(str, Enum):
    CONSTANT = "constant"
    LOGNORMAL = "lognormal"


class ServiceModel(ConfigSchema):
    """Per-frame inference time distribution."""

    kind: ServiceKind = ServiceKind.CONSTANT
    mean_s: float = Field(..., gt=0)
    sigma: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0)


class SimScenario(ConfigSchema):
    """One real-time pipeline run."""

    label: str = "scenario"
    fps: float = Field(30.0, gt=0)
    duration_s: float = Field(..., gt=0)
    policy: DropPolicy = DropPolicy.DROP
    service: ServiceModel
    route_csv: Path | None = None

    @field_validator("policy", mode="before")
    @classmethod
    def accept_long_policy_name(cls, v: object) -> object:
        return DropPolicy.DROP if v == "drop-if-busy" else v


class RouteSpec(ConfigSchema):
    """Route for coverage runs: a trajectory CSV or a synthetic circular loop."""

    csv: Path | None = None
    loop_length_m: float | None = Field(None, gt=0)
    samples: int | None = Field(None, ge=2)

    @model_validator(mode="after")
    def validate_source(self) -> "RouteSpec":
        """Exactly one of ``csv`` or ``loop_length_m``+``samples``."""
        synthetic = self.loop_length_m is not None and self.samples is not None
        if (self.csv is not None) == synthetic:
            raise ValueError("give either csv or loop_length_m with samples")
        return self


class ReplayRun(ConfigSchema):
    label: str
    per_frame_s: float = Field(..., gt=0)


class ReplayStudy(ConfigSchema):
    """Frames replayed from a log under several per-frame times and wall budgets."""

    frame_count: int = Field(..., ge=1)
    route: RouteSpec
    runs: list[ReplayRun] = Field(..., min_length=1)
    wall_times_s: list[float] = Field(..., min_length=1)

    @field_validator("wall_times_s")
    @classmethod
    def validate_wall_times(cls, v: list[float]) -> list[float]:
        if any(w <= 0 for w in v):
            raise ValueError("wall times must be positive")
        return v


class SimulationConfig(ConfigSchema):
    """Top-level ``simulate`` config: real-time scenarios and/or a replay study."""

    realtime: list[SimScenario] = Field(default_factory=list)
    replay: ReplayStudy | None = None

    @model_validator(mode="after")
    def validate_not_empty(self) -> "SimulationConfig":
        if not self.realtime and self.replay is None:
            raise ValueError("config needs at least one realtime scenario or a replay study")
        labels = [s.label for s in self.realtime]
        if len(set(labels)) != len(labels):
            raise ValueError("realtime scenario labels must be unique")
        return self


class SimReport(ReportSchema):
    """Outcome of a real-time simulation."""

    label: str
    policy: DropPolicy
    frames_captured: int
    poses_produced: int
    frames_dropped: int
    pose_timestamps: list[float] = Field(default_factory=list, exclude=True)
    covered_distance_m: float | None = None
    mean_service_s: float
    median_service_s: float


class ReplayReport(ReportSchema):
    """Outcome of one replay at a given per-frame time and wall budget."""

    label: str = ""
    frame_count: int
    per_frame_s: float
    wall_time_s: float
    processed: int
    covered_distance_m: float
