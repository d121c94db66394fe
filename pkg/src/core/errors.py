"""Typed error hierarchy shared by every module."""


class SplitLocError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(SplitLocError, ValueError):
    """An argument is outside the operation's domain."""


class ParseError(SplitLocError):
    """Text input could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DataValidationError(SplitLocError):
    """Parsed input violates a domain invariant."""


class DegenerateFusionError(SplitLocError):
    """Two orientations cannot be averaged."""


class AlignmentError(SplitLocError):
    """Two trajectories do not share timestamps."""


class ShapeError(SplitLocError):
    """A tensor does not have the shape expected at a cut."""


class NumericError(SplitLocError):
    """A layer produced a non-finite activation."""

    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activation after layer {layer!r}")


class InsufficientDataError(SplitLocError):
    """Too few measurements to fit the latency model."""


class DegenerateFitError(SplitLocError):
    """The measurement design matrix is rank deficient."""


class ProtocolError(SplitLocError):
    """A wire frame is malformed."""


class IntegrityError(ProtocolError):
    """A wire frame failed its CRC check."""


class IncompleteFrameError(ProtocolError):
    """A wire frame is shorter than its declared length."""


class ConnectionLostError(SplitLocError):
    """The transport to the offload server failed."""


class RemoteExecutionError(SplitLocError):
    """The server answered with a non-zero status."""

    def __init__(self, status: int, request_id: int):
        self.status = status
        self.request_id = request_id
        super().__init__(f"request {request_id} failed with status {status}")


class StartupError(SplitLocError):
    """The server could not start."""
