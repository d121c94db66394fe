"""Health check endpoints."""

from datetime import UTC, datetime

from fastapi import APIRouter, Request

from src.api.deps import Model, ServerCfg
from src.core.config import get_settings
from src.services.dnn_graph import CUT_NAMES

router = APIRouter()
settings = get_settings()


@router.get("/health")
async def health_check(model: Model, config: ServerCfg) -> dict:
    """Health check with the served model's identity."""
    return {
        "status": "healthy",
        "app_name": settings.app_name,
        "version": settings.app_version,
        "resolution": model.graph.resolution,
        "feature_dim": model.graph.feature_dim,
        "seed": model.weights.seed,
        "cuts": list(CUT_NAMES),
        "total_gflops": model.flops.total / 1e9,
        "throttle_s_per_gflop": config.throttle_s_per_gflop,
        "timestamp": datetime.now(UTC).isoformat(),
    }


@router.get("/ready")
async def readiness_check(request: Request) -> dict:
    """Readiness probe: ready once the model is built."""
    ready = getattr(request.app.state, "model", None) is not None
    return {
        "status": "ready" if ready else "starting",
        "timestamp": datetime.now(UTC).isoformat(),
    }
