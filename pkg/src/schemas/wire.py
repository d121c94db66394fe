"""Wire message schemas for split-inference requests and responses."""

import math
from enum import IntEnum

import numpy as np
import numpy.typing as npt
from pydantic import Field, field_validator, model_validator

from src.schemas.base import BaseSchema

DTYPE_FLOAT32 = 1
MAX_DIMS = 4
UINT64_MAX = 2**64 - 1
UINT32_MAX = 2**32 - 1


class WireStatus(IntEnum):
    """Response status byte."""

    OK = 0
    BAD_CUT = 1
    SHAPE_MISMATCH = 2
    INTERNAL = 3


class InferRequest(BaseSchema):
    """Cut index plus the activation tensor entering the server-side suffix."""

    request_id: int = Field(..., ge=0, le=UINT64_MAX)
    cut_index: int = Field(..., ge=0, le=255)
    dtype: int = Field(DTYPE_FLOAT32)
    shape: tuple[int, ...] = Field(..., min_length=1, max_length=MAX_DIMS)
    payload: bytes

    @field_validator("dtype")
    @classmethod
    def validate_dtype(cls, v: int) -> int:
        """Only little-endian float32 tensors are defined."""
        if v != DTYPE_FLOAT32:
            raise ValueError(f"unsupported dtype {v}")
        return v

    @field_validator("shape")
    @classmethod
    def validate_shape(cls, v: tuple[int, ...]) -> tuple[int, ...]:
        """Dimensions are 32-bit unsigned."""
        for dim in v:
            if not 0 <= dim <= UINT32_MAX:
                raise ValueError(f"dimension {dim} does not fit in 32 bits")
        return v

    @model_validator(mode="after")
    def validate_payload_length(self) -> "InferRequest":
        """Payload length equals 4 bytes per element."""
        expected = 4 * math.prod(self.shape)
        if len(self.payload) != expected:
            raise ValueError(f"payload has {len(self.payload)} bytes, shape needs {expected}")
        return self

    @classmethod
    def from_tensor(cls, request_id: int, cut_index: int,
                    tensor: npt.NDArray[np.float32]) -> "InferRequest":
        return cls(
            request_id=request_id,
            cut_index=cut_index,
            shape=tuple(int(d) for d in tensor.shape),
            payload=np.ascontiguousarray(tensor, dtype="<f4").tobytes(),
        )

    def tensor(self) -> npt.NDArray[np.float32]:
        """Payload as a float32 array of ``shape``."""
        return np.frombuffer(self.payload, dtype="<f4").astype(np.float32).reshape(self.shape)


class InferResponse(BaseSchema):
    """Server answer: status, the six head floats, and server compute time."""

    request_id: int = Field(..., ge=0, le=UINT64_MAX)
    status: WireStatus = WireStatus.OK
    pose: tuple[float, float, float, float, float, float] | None = None
    server_compute_ns: int = Field(0, ge=0, le=UINT64_MAX)

    @field_validator("pose")
    @classmethod
    def round_to_float32(
        cls, v: tuple[float, ...] | None
    ) -> tuple[float, ...] | None:
        """Pose values travel as float32."""
        if v is None:
            return None
        return tuple(float(x) for x in np.asarray(v, dtype=np.float32))

    @model_validator(mode="after")
    def validate_pose_presence(self) -> "InferResponse":
        """A pose accompanies exactly the OK status."""
        if self.status == WireStatus.OK and self.pose is None:
            raise ValueError("status OK requires a pose")
        if self.status != WireStatus.OK and self.pose is not None:
            raise ValueError("only status OK carries a pose")
        return self

    def pose_bytes(self) -> bytes:
        """Little-endian float32 bytes of the pose (empty when absent)."""
        if self.pose is None:
            return b""
        return np.asarray(self.pose, dtype="<f4").tobytes()
