"""FastAPI API routes."""

from src.api.routes import router

__all__ = ["router"]
