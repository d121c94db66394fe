"""Split inference endpoint: one binary request frame in, one response frame out."""

import logging

from fastapi import APIRouter, HTTPException, Request, Response, status
from starlette.concurrency import run_in_threadpool

from src.api.deps import Model, ServerCfg
from src.core.errors import ProtocolError
from src.services.offload_runtime import OCTET_STREAM, handle_frame

logger = logging.getLogger(__name__)

router = APIRouter()


@router.post("/infer", response_class=Response)
async def infer(request: Request, model: Model, config: ServerCfg) -> Response:
    """Run the server-side suffix for the frame in the request body.

    Frames that cannot be decoded carry no trustworthy request id and are
    rejected with 400; everything else is answered with a status frame.
    """
    body = await request.body()
    try:
        frame = await run_in_threadpool(handle_frame, model, body, config.throttle_s_per_gflop)
    except ProtocolError as e:
        logger.warning("rejected %d-byte frame: %s", len(body), e)
        raise HTTPException(
            status_code=status.HTTP_400_BAD_REQUEST,
            detail=f"{type(e).__name__}: {e}",
        ) from e
    return Response(content=frame, media_type=OCTET_STREAM)
