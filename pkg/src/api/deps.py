"""API dependencies for the served model and server configuration."""

from typing import Annotated

from fastapi import Depends, HTTPException, Request, status

from src.schemas.runtime import ServerConfig
from src.services.executor import ModelBundle


def get_model(request: Request) -> ModelBundle:
    """Model built at startup and shared read-only by every request."""
    model: ModelBundle | None = getattr(request.app.state, "model", None)
    if model is None:
        raise HTTPException(
            status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
            detail="Model not loaded",
        )
    return model


def get_server_config(request: Request) -> ServerConfig:
    config: ServerConfig = request.app.state.config
    return config


# Type aliases for cleaner route signatures
Model = Annotated[ModelBundle, Depends(get_model)]
ServerCfg = Annotated[ServerConfig, Depends(get_server_config)]
