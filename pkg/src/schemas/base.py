"""Base schema configurations."""

from pydantic import BaseModel, ConfigDict


class BaseSchema(BaseModel):
    """Base schema with common configuration."""

    model_config = ConfigDict(
        populate_by_name=True,
        str_strip_whitespace=True,
    )


class ConfigSchema(BaseSchema):
    """Schema for user-supplied configuration: unknown fields are rejected."""

    model_config = ConfigDict(extra="forbid")


class ReportSchema(BaseSchema):
    """Schema for immutable experiment outputs."""

    model_config = ConfigDict(frozen=True)
