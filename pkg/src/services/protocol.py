"""Binary codec for split-inference frames.

Request (little-endian)::

    magic "SPLT" | version u8 | type=1 u8 | reserved u16 | request_id u64 |
    cut_index u8 | dtype u8 | ndim u8 | flags u8 | dims u32*ndim |
    payload_len u32 | payload | crc32 u32

Response, fixed 56 bytes::

    magic | version | type=2 | reserved u16 | request_id u64 | status u8 |
    pad[3] | pose f32*6 | server_compute_ns u64 | crc32 u32

The CRC (IEEE, as ``zlib.crc32``) covers every byte before it. See PROTOCOL.md.
"""

import math
import struct
import zlib

from src.core.errors import IncompleteFrameError, IntegrityError, ProtocolError
from src.schemas.wire import DTYPE_FLOAT32, MAX_DIMS, InferRequest, InferResponse, WireStatus

MAGIC = b"SPLT"
VERSION = 1
TYPE_REQUEST = 1
TYPE_RESPONSE = 2

REQUEST_HEAD = struct.Struct("<4sBBHQBBBB")
RESPONSE_BODY = struct.Struct("<4sBBHQB3x6fQ")
CRC = struct.Struct("<I")
U32 = struct.Struct("<I")

RESPONSE_SIZE = RESPONSE_BODY.size + CRC.size
_ZERO_POSE = (0.0,) * 6


def _crc(data: bytes | memoryview) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def request_frame_length(shape: tuple[int, ...]) -> int:
    """Exact encoded size of a request carrying a float32 tensor of ``shape``."""
    return REQUEST_HEAD.size + U32.size * len(shape) + U32.size + 4 * math.prod(shape) + CRC.size


def encode_request(req: InferRequest) -> bytes:
    ndim = len(req.shape)
    head = REQUEST_HEAD.pack(MAGIC, VERSION, TYPE_REQUEST, 0, req.request_id, req.cut_index,
                             req.dtype, ndim, 0)
    body = b"".join((
        head,
        struct.pack(f"<{ndim}I", *req.shape),
        U32.pack(len(req.payload)),
        req.payload,
    ))
    return body + CRC.pack(_crc(body))


def _check_preamble(magic: bytes, version: int, msg_type: int, reserved: int,
                    expected_type: int) -> None:
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    if msg_type != expected_type:
        raise ProtocolError(f"unexpected message type {msg_type}")
    if reserved != 0:
        raise ProtocolError("reserved bits set")


def decode_request(data: bytes) -> InferRequest:
    """Parse and verify a request frame."""
    if len(data) < REQUEST_HEAD.size:
        raise IncompleteFrameError(f"{len(data)} bytes is shorter than the request header")
    magic, version, msg_type, reserved, request_id, cut_index, dtype, ndim, flags = (
        REQUEST_HEAD.unpack_from(data)
    )
    _check_preamble(magic, version, msg_type, reserved, TYPE_REQUEST)
    if flags != 0:
        raise ProtocolError("flags must be zero")
    if dtype != DTYPE_FLOAT32:
        raise ProtocolError(f"unsupported dtype {dtype}")
    if not 1 <= ndim <= MAX_DIMS:
        raise ProtocolError(f"ndim {ndim} outside 1..{MAX_DIMS}")

    dims_end = REQUEST_HEAD.size + U32.size * ndim
    if len(data) < dims_end + U32.size:
        raise IncompleteFrameError("truncated inside the shape header")
    shape = struct.unpack_from(f"<{ndim}I", data, REQUEST_HEAD.size)
    (payload_len,) = U32.unpack_from(data, dims_end)
    if payload_len != 4 * math.prod(shape):
        raise ProtocolError(f"payload_len {payload_len} does not match shape {shape}")

    payload_start = dims_end + U32.size
    total = payload_start + payload_len + CRC.size
    if len(data) < total:
        raise IncompleteFrameError(f"frame declares {total} bytes, got {len(data)}")
    if len(data) > total:
        raise ProtocolError(f"{len(data) - total} trailing bytes after frame")
    view = memoryview(data)
    (crc,) = CRC.unpack_from(data, total - CRC.size)
    if _crc(view[:total - CRC.size]) != crc:
        raise IntegrityError("request crc mismatch")
    return InferRequest(
        request_id=request_id,
        cut_index=cut_index,
        dtype=dtype,
        shape=shape,
        payload=bytes(view[payload_start:payload_start + payload_len]),
    )


def encode_response(resp: InferResponse) -> bytes:
    pose = resp.pose if resp.pose is not None else _ZERO_POSE
    body = RESPONSE_BODY.pack(MAGIC, VERSION, TYPE_RESPONSE, 0, resp.request_id,
                              int(resp.status), *pose, resp.server_compute_ns)
    return body + CRC.pack(_crc(body))


def decode_response(data: bytes) -> InferResponse:
    """Parse and verify a 56-byte response frame."""
    if len(data) < RESPONSE_SIZE:
        raise IncompleteFrameError(f"response has {len(data)} of {RESPONSE_SIZE} bytes")
    if len(data) > RESPONSE_SIZE:
        raise ProtocolError(f"response has {len(data) - RESPONSE_SIZE} trailing bytes")
    fields = RESPONSE_BODY.unpack_from(data)
    magic, version, msg_type, reserved, request_id, status = fields[:6]
    _check_preamble(magic, version, msg_type, reserved, TYPE_RESPONSE)
    (crc,) = CRC.unpack_from(data, RESPONSE_BODY.size)
    if _crc(memoryview(data)[:RESPONSE_BODY.size]) != crc:
        raise IntegrityError("response crc mismatch")
    try:
        wire_status = WireStatus(status)
    except ValueError:
        raise ProtocolError(f"unknown status {status}") from None
    pose = tuple(fields[6:12]) if wire_status == WireStatus.OK else None
    return InferResponse(
        request_id=request_id,
        status=wire_status,
        pose=pose,
        server_compute_ns=fields[12],
    )
