"""FastAPI application entry point for the offload server."""

import logging
import socket
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI
from starlette.concurrency import run_in_threadpool

from src.api import router
from src.core.config import Settings, get_settings
from src.core.errors import SplitLocError, StartupError
from src.schemas.runtime import ServerConfig
from src.services.executor import ModelBundle

logger = logging.getLogger(__name__)


def server_config_from_settings(settings: Settings) -> ServerConfig:
    return ServerConfig(
        host=settings.listen_host,
        port=settings.listen_port,
        resolution=settings.resolution,
        feature_dim=settings.feature_dim,
        seed=settings.weight_seed,
        max_sessions=settings.max_sessions,
        log_level=settings.log_level,
    )


def create_app(config: ServerConfig | None = None, model: ModelBundle | None = None) -> FastAPI:
    """Build the app; without a prebuilt ``model`` the lifespan builds it from ``config``."""
    settings = get_settings()
    config = config or server_config_from_settings(settings)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        """Application lifespan handler."""
        if app.state.model is None:
            app.state.model = await run_in_threadpool(
                ModelBundle.build, config.resolution, config.feature_dim, config.seed
            )
        yield

    app = FastAPI(
        title=settings.app_name,
        version=settings.app_version,
        description="Split-inference offload server for camera relocalization",
        lifespan=lifespan,
    )
    app.state.config = config
    app.state.model = model
    app.include_router(router, prefix="/api/v1")

    @app.get("/")
    async def root() -> dict:
        """Root endpoint."""
        return {
            "app": settings.app_name,
            "version": settings.app_version,
            "docs": "/docs",
        }

    return app


def bind_socket(host: str, port: int) -> socket.socket:
    """Bind the listening socket up front so a busy port fails fast."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as e:
        sock.close()
        raise StartupError(f"cannot bind {host}:{port}: {e}") from e
    return sock


def build_server(config: ServerConfig) -> uvicorn.Server:
    """Model, app and uvicorn server for ``config``; the model is built before serving."""
    try:
        model = ModelBundle.build(config.resolution, config.feature_dim, config.seed)
    except SplitLocError as e:
        raise StartupError(f"cannot build model: {e}") from e
    uvicorn_config = uvicorn.Config(
        create_app(config, model),
        limit_concurrency=config.max_sessions,
        log_level=config.log_level.lower(),
        access_log=False,
    )
    return uvicorn.Server(uvicorn_config)


def serve(config: ServerConfig) -> None:
    """Serve until interrupted."""
    sock = bind_socket(config.host, config.port)
    try:
        server = build_server(config)
    except StartupError:
        sock.close()
        raise
    host, port = sock.getsockname()[:2]
    logger.info("serving %dpx model (seed %d) on %s:%d", config.resolution, config.seed, host, port)
    server.run(sockets=[sock])


app = create_app()
