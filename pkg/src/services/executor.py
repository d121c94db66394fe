"""Deterministic weights and the reference executor for the layer graph.

Weights come from a SplitMix64 counter stream, so any implementation of the
same generator reproduces them byte for byte. Every kernel works in float32
with a fixed evaluation order: convolutions accumulate kernel taps in
row-major order, each tap contracting over input channels, and no two layers
are ever fused. Running ``[null, k)`` and then ``[k, end)`` is therefore the
same sequence of operations as one full pass, and the split composes
bit-exactly.

Each tap's channel contraction is a BLAS matrix product, so activation
checksums hold for one numpy/BLAS build and are regenerated with
``splitloc golden`` when either changes. Weight checksums do not depend on
the build; the seed-42 conv1 value is frozen in ``data/golden.csv``.
"""

import logging
import zlib
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from src.core.errors import InvalidArgumentError, NumericError, ShapeError
from src.services.dnn_graph import (
    CUT_NAMES,
    FlopCount,
    LayerDescriptor,
    LayerGraph,
    LayerKind,
    build_backbone,
    count_flops,
)
from src.services.pose import Pose, quat_exp

logger = logging.getLogger(__name__)

Tensor = npt.NDArray[np.float32]

END_CUT = "end"
BN_EPS = np.float32(1e-5)
WEIGHT_RANGE = 0.1

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def mix64(z: int) -> int:
    """SplitMix64 output finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def splitmix64_stream(state: int, count: int) -> npt.NDArray[np.uint64]:
    """First ``count`` outputs of a SplitMix64 generator seeded with ``state``."""
    with np.errstate(over="ignore"):
        z = np.uint64(state & MASK64) + np.arange(1, count + 1, dtype=np.uint64) * np.uint64(
            GOLDEN_GAMMA
        )
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def stream_key(seed: int, layer_index: int, param_index: int) -> int:
    """Independent generator key for one parameter tensor."""
    return mix64((seed & MASK64) ^ mix64((layer_index << 8) | param_index))


def uniform_tensor(seed: int, layer_index: int, param_index: int,
                   shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
    """Uniform draws in [-0.1, 0.1) (float64, before rounding)."""
    count = int(np.prod(shape))
    bits = splitmix64_stream(stream_key(seed, layer_index, param_index), count)
    unit = (bits >> np.uint64(40)).astype(np.float64) * 2.0**-24
    return (unit * (2 * WEIGHT_RANGE) - WEIGHT_RANGE).reshape(shape)


@dataclass(frozen=True)
class WeightSet:
    """Per-layer parameter tensors, aligned with ``graph.layers``."""

    seed: int
    params: tuple[dict[str, Tensor], ...]

    def tensor_bytes(self, layer_index: int, name: str) -> bytes:
        return self.params[layer_index][name].astype("<f4").tobytes()


def _frozen(values: npt.NDArray[np.float64]) -> Tensor:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    arr.setflags(write=False)
    return arr


class _ParamStream:
    """Hands out consecutive parameter indices for one layer."""

    def __init__(self, seed: int, layer_index: int):
        self.seed = seed
        self.layer_index = layer_index
        self.next_index = 0

    def draw(self, shape: tuple[int, ...]) -> npt.NDArray[np.float64]:
        values = uniform_tensor(self.seed, self.layer_index, self.next_index, shape)
        self.next_index += 1
        return values

    def conv(self, out_ch: int, in_ch: int, kernel: int) -> Tensor:
        return _frozen(self.draw((out_ch, in_ch, kernel, kernel)))

    def batchnorm(self, prefix: str, channels: int) -> dict[str, Tensor]:
        return {
            f"{prefix}gamma": _frozen(1.0 + self.draw((channels,))),
            f"{prefix}beta": _frozen(self.draw((channels,))),
            f"{prefix}mean": _frozen(self.draw((channels,))),
            f"{prefix}var": _frozen(1.0 + self.draw((channels,))),
        }


def _layer_params(layer: LayerDescriptor, stream: _ParamStream) -> dict[str, Tensor]:
    p = layer.params
    match layer.kind:
        case LayerKind.CONV:
            return {"weight": stream.conv(p["out_channels"], p["in_channels"], p["kernel"])}
        case LayerKind.BATCHNORM:
            return stream.batchnorm("", p["channels"])
        case LayerKind.RESIDUAL_BLOCK:
            ch, in_ch = p["channels"], p["in_channels"]
            params = {"conv1.weight": stream.conv(ch, in_ch, 3)}
            params |= stream.batchnorm("bn1.", ch)
            params["conv2.weight"] = stream.conv(ch, ch, 3)
            params |= stream.batchnorm("bn2.", ch)
            if p["downsample"]:
                params["downsample.weight"] = stream.conv(ch, in_ch, 1)
                params |= stream.batchnorm("downsample.bn.", ch)
            return params
        case LayerKind.FULLY_CONNECTED:
            return {
                "weight": _frozen(stream.draw((p["out_units"], p["in_units"]))),
                "bias": _frozen(stream.draw((p["out_units"],))),
            }
        case _:
            return {}


def init_weights(graph: LayerGraph, seed: int) -> WeightSet:
    """Fill every parameter tensor from the keyed SplitMix64 stream."""
    if not 0 <= seed <= MASK64:
        raise InvalidArgumentError("seed must fit in 64 bits")
    params = tuple(
        _layer_params(layer, _ParamStream(seed, idx)) for idx, layer in enumerate(graph.layers)
    )
    logger.debug("initialised %d layers from seed %d", len(params), seed)
    return WeightSet(seed=seed, params=params)


def preprocess(frame: npt.NDArray[np.uint8], resolution: int) -> Tensor:
    """Center-crop an HxWx3 8-bit frame and map it to planar ``pixel/255 - 0.5``."""
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise InvalidArgumentError(f"expected an HxWx3 frame, got shape {frame.shape}")
    h, w = frame.shape[:2]
    if h < resolution or w < resolution:
        raise InvalidArgumentError(f"frame {h}x{w} is smaller than {resolution}x{resolution}")
    top, left = (h - resolution) // 2, (w - resolution) // 2
    crop = frame[top:top + resolution, left:left + resolution].astype(np.float32)
    planar = np.ascontiguousarray(crop.transpose(2, 0, 1))
    return planar / np.float32(255.0) - np.float32(0.5)


# Kernels ---------------------------------------------------------------------


def conv2d(x: Tensor, weight: Tensor, stride: int, padding: int) -> Tensor:
    c_in, h, w = x.shape
    c_out, _, k, _ = weight.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
    out = np.zeros((c_out, h_out * w_out), dtype=np.float32)
    for i in range(k):
        for j in range(k):
            patch = xp[:, i:i + stride * (h_out - 1) + 1:stride,
                       j:j + stride * (w_out - 1) + 1:stride].reshape(c_in, h_out * w_out)
            out += np.ascontiguousarray(weight[:, :, i, j]) @ patch
    return out.reshape(c_out, h_out, w_out)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, mean: Tensor, var: Tensor) -> Tensor:
    scale = gamma / np.sqrt(var + BN_EPS)
    shift = beta - mean * scale
    return x * scale[:, None, None] + shift[:, None, None]


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, np.float32(0.0))


def maxpool2d(x: Tensor, kernel: int, stride: int, padding: int) -> Tensor:
    c, h, w = x.shape
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)),
                constant_values=-np.inf)
    out = np.full((c, h_out, w_out), -np.inf, dtype=np.float32)
    for i in range(kernel):
        for j in range(kernel):
            np.maximum(out, xp[:, i:i + stride * (h_out - 1) + 1:stride,
                               j:j + stride * (w_out - 1) + 1:stride], out=out)
    return out


def global_avgpool(x: Tensor) -> Tensor:
    c = x.shape[0]
    return x.reshape(c, -1).mean(axis=1, dtype=np.float32)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return weight @ x + bias


def _bn(x: Tensor, params: dict[str, Tensor], prefix: str = "") -> Tensor:
    return batchnorm(x, params[f"{prefix}gamma"], params[f"{prefix}beta"],
                     params[f"{prefix}mean"], params[f"{prefix}var"])


def residual_block(x: Tensor, params: dict[str, Tensor], stride: int, downsample: bool) -> Tensor:
    out = relu(_bn(conv2d(x, params["conv1.weight"], stride, 1), params, "bn1."))
    out = _bn(conv2d(out, params["conv2.weight"], 1, 1), params, "bn2.")
    identity = x
    if downsample:
        identity = _bn(conv2d(x, params["downsample.weight"], stride, 0), params,
                       "downsample.bn.")
    return relu(out + identity)


def run_layer(layer: LayerDescriptor, params: dict[str, Tensor], x: Tensor) -> Tensor:
    """Apply one layer."""
    p = layer.params
    match layer.kind:
        case LayerKind.CONV:
            return conv2d(x, params["weight"], p["stride"], p["padding"])
        case LayerKind.BATCHNORM:
            return _bn(x, params)
        case LayerKind.RELU:
            return relu(x)
        case LayerKind.MAXPOOL:
            return maxpool2d(x, p["kernel"], p["stride"], p["padding"])
        case LayerKind.RESIDUAL_BLOCK:
            return residual_block(x, params, p["stride"], p["downsample"])
        case LayerKind.AVGPOOL_GLOBAL:
            return global_avgpool(x)
        case LayerKind.FULLY_CONNECTED:
            return fully_connected(x, params["weight"], params["bias"])
    raise InvalidArgumentError(f"unsupported layer kind {layer.kind}")


# Execution -------------------------------------------------------------------


@dataclass(frozen=True)
class PoseEstimate:
    """Raw head outputs (translation then log quaternion) and the decoded pose."""

    values: Tensor

    @property
    def xyz(self) -> Tensor:
        return self.values[:3]

    @property
    def logq(self) -> Tensor:
        return self.values[3:]

    @property
    def pose(self) -> Pose:
        t = (float(self.values[0]), float(self.values[1]), float(self.values[2]))
        return Pose(t, quat_exp([float(v) for v in self.logq]))

    def to_bytes(self) -> bytes:
        return self.values.astype("<f4").tobytes()


def _resolve(graph: LayerGraph, cut: str | int) -> int:
    if isinstance(cut, int):
        if not 0 <= cut <= graph.end_index:
            raise InvalidArgumentError(f"layer index {cut} out of range")
        return cut
    return graph.end_index if cut == END_CUT else graph.cut_index(cut)


def _check_finite(name: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(name)


def execute(graph: LayerGraph, weights: WeightSet, x: Tensor, from_cut: str | int,
            to_cut: str | int) -> "Tensor | PoseEstimate":
    """Run trunk layers ``[from_cut, to_cut)``; through the heads when ``to_cut`` is end.

    Returns the activation tensor at ``to_cut``, or a :class:`PoseEstimate`
    when ``to_cut`` is ``"end"``. ``from_cut == to_cut`` returns the input.
    """
    start, stop = _resolve(graph, from_cut), _resolve(graph, to_cut)
    if start > stop:
        raise InvalidArgumentError(f"cut {from_cut!r} does not precede {to_cut!r}")
    expected = graph.activation_shape(start)
    if tuple(x.shape) != expected:
        raise ShapeError(f"input shape {tuple(x.shape)} does not match {expected} at {from_cut!r}")
    act = np.asarray(x, dtype=np.float32)
    for idx in range(start, stop):
        layer = graph.layers[idx]
        act = run_layer(layer, weights.params[idx], act)
        _check_finite(layer.name, act)
    if stop < graph.end_index or to_cut != END_CUT:
        return act
    offset = graph.end_index
    outputs = []
    for i, head in enumerate(graph.heads):
        out = run_layer(head, weights.params[offset + i], act)
        _check_finite(head.name, out)
        outputs.append(out)
    return PoseEstimate(np.concatenate(outputs).astype(np.float32))


@dataclass(frozen=True)
class ModelBundle:
    """Graph, weights and FLOP table built once and shared read-only."""

    graph: LayerGraph
    weights: WeightSet
    flops: FlopCount

    @classmethod
    def build(cls, resolution: int, feature_dim: int, seed: int) -> "ModelBundle":
        graph = build_backbone(resolution, feature_dim)
        logger.info(
            "building model: resolution=%d feature_dim=%d seed=%d", resolution, feature_dim, seed
        )
        return cls(graph=graph, weights=init_weights(graph, seed), flops=count_flops(graph))

    def run_prefix(self, x: Tensor, cut: str) -> Tensor:
        act = execute(self.graph, self.weights, x, "null", cut)
        assert not isinstance(act, PoseEstimate)
        return act

    def run_suffix(self, x: Tensor, cut: str) -> PoseEstimate:
        est = execute(self.graph, self.weights, x, cut, END_CUT)
        assert isinstance(est, PoseEstimate)
        return est

    def run_full(self, x: Tensor) -> PoseEstimate:
        return self.run_suffix(x, "null")


def seeded_input(graph: LayerGraph, seed: int) -> Tensor:
    """Deterministic input tensor in [-0.5, 0.5) for checksum runs."""
    values = uniform_tensor(seed, 0xFFFF, 0, graph.input_shape) * 5.0
    return np.ascontiguousarray(values, dtype=np.float32)


def crc32_hex(data: bytes) -> str:
    return f"{zlib.crc32(data) & 0xFFFFFFFF:08x}"


def activation_checksums(bundle: ModelBundle, x: Tensor) -> dict[str, str]:
    """CRC32 of the activation at every cut plus the final head outputs."""
    sums: dict[str, str] = {}
    for cut in CUT_NAMES:
        act = bundle.run_prefix(x, cut)
        sums[cut] = crc32_hex(act.astype("<f4").tobytes())
    sums[END_CUT] = crc32_hex(bundle.run_full(x).to_bytes())
    return sums
