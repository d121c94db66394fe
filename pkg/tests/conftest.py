"""Pytest fixtures and configuration."""

import threading
import time
from collections.abc import AsyncGenerator, Callable, Iterator

import pytest
import pytest_asyncio
import uvicorn
from fastapi import FastAPI
from httpx import ASGITransport, AsyncClient

from src.main import bind_socket, create_app
from src.schemas.runtime import ServerConfig
from src.services.executor import ModelBundle

# Small resolution keeps the numpy executor fast in tests
TEST_RESOLUTION = 56
TEST_FEATURE_DIM = 2048
TEST_SEED = 42


@pytest.fixture(scope="session")
def model() -> ModelBundle:
    """Model shared by every test; weights are read-only."""
    return ModelBundle.build(TEST_RESOLUTION, TEST_FEATURE_DIM, TEST_SEED)


@pytest.fixture
def server_config() -> ServerConfig:
    return ServerConfig(resolution=TEST_RESOLUTION, seed=TEST_SEED, port=0)


@pytest.fixture
def app(server_config: ServerConfig, model: ModelBundle) -> FastAPI:
    """Offload app with the prebuilt test model."""
    return create_app(server_config, model)


@pytest_asyncio.fixture(scope="function")
async def client(app: FastAPI) -> AsyncGenerator[AsyncClient, None]:
    """Create an async test client bound to the app in-process."""
    async with AsyncClient(
        transport=ASGITransport(app=app),
        base_url="http://test",
    ) as ac:
        yield ac


class LiveServer:
    """A uvicorn server on an ephemeral loopback port, run in a daemon thread."""

    def __init__(self, app: FastAPI):
        self.sock = bind_socket("127.0.0.1", 0)
        self.port = self.sock.getsockname()[1]
        self.server = uvicorn.Server(
            uvicorn.Config(app, log_level="warning", access_log=False)
        )
        self.thread = threading.Thread(
            target=self.server.run, kwargs={"sockets": [self.sock]}, daemon=True
        )

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> None:
        self.thread.start()
        deadline = time.monotonic() + 10.0
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("live server did not start")
            time.sleep(0.01)

    def stop(self) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10.0)
        self.sock.close()


@pytest.fixture
def live_server_factory(
    model: ModelBundle,
) -> Iterator[Callable[..., LiveServer]]:
    """Start live servers with a given suffix throttle and model; all are stopped on teardown."""
    servers: list[LiveServer] = []

    def start(
        throttle_s_per_gflop: float = 0.0, bundle: ModelBundle | None = None
    ) -> LiveServer:
        bundle = bundle or model
        config = ServerConfig(
            resolution=bundle.graph.resolution,
            feature_dim=bundle.graph.feature_dim,
            seed=bundle.weights.seed,
            port=0,
            throttle_s_per_gflop=throttle_s_per_gflop,
        )
        server = LiveServer(create_app(config, bundle))
        server.start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()


@pytest.fixture
def live_server(live_server_factory: Callable[..., LiveServer]) -> LiveServer:
    return live_server_factory()


@pytest.fixture
def dead_url() -> str:
    """URL of a loopback port with nothing listening."""
    sock = bind_socket("127.0.0.1", 0)
    port = sock.getsockname()[1]
    sock.close()
    return f"http://127.0.0.1:{port}"
