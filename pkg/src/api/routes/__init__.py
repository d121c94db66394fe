"""API route aggregation."""

from fastapi import APIRouter

from src.api.routes.health import router as health_router
from src.api.routes.infer import router as infer_router

router = APIRouter()

router.include_router(health_router, tags=["Health"])
router.include_router(infer_router, tags=["Inference"])
