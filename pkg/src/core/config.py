"""Toolkit configuration using Pydantic Settings."""

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field, computed_field
from pydantic_settings import BaseSettings, SettingsConfigDict

SUPPORTED_RESOLUTIONS = (56, 112, 224)


class Settings(BaseSettings):
    """Global settings loaded from environment variables (prefix ``SPLITLOC_``)."""

    model_config = SettingsConfigDict(
        env_prefix="SPLITLOC_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # App
    app_name: str = "splitloc"
    app_version: str = "0.1.0"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    output_dir: Path = Path("out")

    # Model
    resolution: Literal[56, 112, 224] = 224
    feature_dim: int = Field(2048, ge=8)
    weight_seed: int = Field(42, ge=0, lt=2**64)

    # Server
    listen_host: str = "127.0.0.1"
    listen_port: int = Field(8750, ge=0, le=65535)
    max_sessions: int = Field(8, ge=1)

    # Client
    request_timeout_s: float = Field(30.0, gt=0)
    retry_budget: int = Field(3, ge=0)
    retry_backoff_s: float = Field(0.1, ge=0)

    @computed_field
    @property
    def server_url(self) -> str:
        """Base URL of the offload server."""
        return f"http://{self.listen_host}:{self.listen_port}"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
