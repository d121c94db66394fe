"""Layered model of the ResNet34 pose-regression network.

The graph is a flat trunk of layer descriptors (stem, 16 residual blocks,
global pooling, the feature layer and its ReLU) followed by two parallel
3-unit regression heads. Named cut points index into the trunk: a cut at
index ``k`` means layers ``[0, k)`` run on the client.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from src.core.config import SUPPORTED_RESOLUTIONS
from src.core.errors import InvalidArgumentError

BYTES_PER_ELEMENT = 4
MIN_FEATURE_DIM = 8

CUT_NAMES: tuple[str, ...] = (
    "null",
    "conv1",
    "bn1",
    "relu",
    "maxpool",
    "layer1",
    "layer2",
    "layer3",
    "layer4",
    "avgpool",
    "fc",
)

# (stage name, channels, blocks, first stride)
RESNET34_STAGES: tuple[tuple[str, int, int, int], ...] = (
    ("layer1", 64, 3, 1),
    ("layer2", 128, 4, 2),
    ("layer3", 256, 6, 2),
    ("layer4", 512, 3, 2),
)

Shape = tuple[int, ...]


class LayerKind(str, Enum):
    """Kinds of layer the executor understands."""

    CONV = "conv"
    BATCHNORM = "batchnorm"
    RELU = "relu"
    MAXPOOL = "maxpool"
    RESIDUAL_BLOCK = "residual_block"
    AVGPOOL_GLOBAL = "avgpool_global"
    FULLY_CONNECTED = "fully_connected"


@dataclass(frozen=True)
class LayerDescriptor:
    """One layer of the graph with its static shape and cost."""

    name: str
    kind: LayerKind
    params: dict[str, Any]
    in_shape: Shape
    out_shape: Shape
    flops: int
    head: bool = False

    @property
    def out_elements(self) -> int:
        return math.prod(self.out_shape)


@dataclass(frozen=True)
class LayerGraph:
    """Ordered trunk layers, the two heads, and the named cut points."""

    input_shape: Shape
    feature_dim: int
    layers: tuple[LayerDescriptor, ...]
    cut_points: dict[str, int] = field(hash=False)

    @property
    def resolution(self) -> int:
        return self.input_shape[1]

    @property
    def trunk(self) -> tuple[LayerDescriptor, ...]:
        return tuple(layer for layer in self.layers if not layer.head)

    @property
    def heads(self) -> tuple[LayerDescriptor, ...]:
        return tuple(layer for layer in self.layers if layer.head)

    @property
    def end_index(self) -> int:
        """Trunk length; executing to here and through the heads yields a pose."""
        return len(self.trunk)

    def cut_index(self, cut: str) -> int:
        """Trunk index of a named cut."""
        try:
            return self.cut_points[cut]
        except KeyError:
            raise InvalidArgumentError(
                f"unknown cut {cut!r}; expected one of {', '.join(self.cut_points)}"
            ) from None

    def cut_name(self, index: int) -> str:
        """Name of the cut at position ``index`` in :data:`CUT_NAMES`."""
        if not 0 <= index < len(CUT_NAMES):
            raise InvalidArgumentError(f"cut index {index} out of range")
        return CUT_NAMES[index]

    def activation_shape(self, index: int) -> Shape:
        """Shape of the tensor entering trunk layer ``index``."""
        if not 0 <= index <= self.end_index:
            raise InvalidArgumentError(f"layer index {index} out of range")
        return self.input_shape if index == 0 else self.trunk[index - 1].out_shape


def conv_out(size: int, kernel: int, stride: int, padding: int) -> int:
    """Standard convolution/pooling output size."""
    return (size + 2 * padding - kernel) // stride + 1


def _conv(name: str, in_shape: Shape, out_channels: int, kernel: int, stride: int,
          padding: int) -> LayerDescriptor:
    c_in, h, w = in_shape
    h_out, w_out = conv_out(h, kernel, stride, padding), conv_out(w, kernel, stride, padding)
    flops = 2 * out_channels * c_in * kernel * kernel * h_out * w_out
    return LayerDescriptor(
        name=name,
        kind=LayerKind.CONV,
        params={"in_channels": c_in, "out_channels": out_channels, "kernel": kernel,
                "stride": stride, "padding": padding},
        in_shape=in_shape,
        out_shape=(out_channels, h_out, w_out),
        flops=flops,
    )


def _batchnorm(name: str, shape: Shape) -> LayerDescriptor:
    return LayerDescriptor(name, LayerKind.BATCHNORM, {"channels": shape[0]}, shape, shape,
                           2 * math.prod(shape))


def _relu(name: str, shape: Shape) -> LayerDescriptor:
    return LayerDescriptor(name, LayerKind.RELU, {}, shape, shape, math.prod(shape))


def _maxpool(name: str, in_shape: Shape, kernel: int = 3, stride: int = 2,
             padding: int = 1) -> LayerDescriptor:
    c, h, w = in_shape
    out_shape = (c, conv_out(h, kernel, stride, padding), conv_out(w, kernel, stride, padding))
    return LayerDescriptor(
        name,
        LayerKind.MAXPOOL,
        {"kernel": kernel, "stride": stride, "padding": padding},
        in_shape,
        out_shape,
        kernel * kernel * math.prod(out_shape),
    )


def _residual_block(name: str, in_shape: Shape, channels: int, stride: int) -> LayerDescriptor:
    """Basic block: conv3x3-bn-relu-conv3x3-bn (+ projection) add relu."""
    conv_a = _conv(f"{name}.conv1", in_shape, channels, 3, stride, 1)
    out_shape = conv_a.out_shape
    conv_b = _conv(f"{name}.conv2", out_shape, channels, 3, 1, 1)
    elements = math.prod(out_shape)
    downsample = stride != 1 or in_shape[0] != channels
    flops = conv_a.flops + conv_b.flops
    flops += 2 * (2 * elements)  # two batchnorms
    flops += 2 * elements  # inner and output relu
    flops += elements  # residual add
    if downsample:
        proj = _conv(f"{name}.downsample", in_shape, channels, 1, stride, 0)
        flops += proj.flops + 2 * elements
    return LayerDescriptor(
        name,
        LayerKind.RESIDUAL_BLOCK,
        {"in_channels": in_shape[0], "channels": channels, "stride": stride,
         "downsample": downsample},
        in_shape,
        out_shape,
        flops,
    )


def _fully_connected(name: str, in_units: int, out_units: int, head: bool = False
                     ) -> LayerDescriptor:
    return LayerDescriptor(
        name,
        LayerKind.FULLY_CONNECTED,
        {"in_units": in_units, "out_units": out_units},
        (in_units,),
        (out_units,),
        2 * in_units * out_units,
        head=head,
    )


def build_backbone(input_resolution: int = 224, feature_dim: int = 2048) -> LayerGraph:
    """Build the ResNet34 trunk plus the translation and log-quaternion heads."""
    if input_resolution not in SUPPORTED_RESOLUTIONS:
        raise InvalidArgumentError(
            f"unsupported resolution {input_resolution}; expected one of {SUPPORTED_RESOLUTIONS}"
        )
    if feature_dim < MIN_FEATURE_DIM:
        raise InvalidArgumentError(f"feature_dim must be >= {MIN_FEATURE_DIM}")

    input_shape: Shape = (3, input_resolution, input_resolution)
    layers: list[LayerDescriptor] = []
    cut_points: dict[str, int] = {"null": 0}

    def push(layer: LayerDescriptor, cut: str | None = None) -> Shape:
        layers.append(layer)
        if cut:
            cut_points[cut] = len(layers)
        return layer.out_shape

    shape = push(_conv("conv1", input_shape, 64, 7, 2, 3), "conv1")
    shape = push(_batchnorm("bn1", shape), "bn1")
    shape = push(_relu("relu", shape), "relu")
    shape = push(_maxpool("maxpool", shape), "maxpool")

    for stage, channels, blocks, first_stride in RESNET34_STAGES:
        for b in range(blocks):
            block = _residual_block(f"{stage}.{b}", shape, channels,
                                    first_stride if b == 0 else 1)
            shape = push(block, stage if b == blocks - 1 else None)

    channels = shape[0]
    push(
        LayerDescriptor("avgpool", LayerKind.AVGPOOL_GLOBAL, {}, shape, (channels,),
                        math.prod(shape)),
        "avgpool",
    )
    push(_fully_connected("fc_feat", channels, feature_dim), "fc")
    push(_relu("relu_feat", (feature_dim,)))
    layers.append(_fully_connected("fc_xyz", feature_dim, 3, head=True))
    layers.append(_fully_connected("fc_logq", feature_dim, 3, head=True))

    return LayerGraph(
        input_shape=input_shape,
        feature_dim=feature_dim,
        layers=tuple(layers),
        cut_points={name: cut_points[name] for name in CUT_NAMES},
    )


def cut_payload_bytes(graph: LayerGraph, cut: str) -> int:
    """Bytes of float32 activation shipped when splitting at ``cut``."""
    return math.prod(graph.activation_shape(graph.cut_index(cut))) * BYTES_PER_ELEMENT


@dataclass(frozen=True)
class FlopCount:
    """Per-layer FLOPs and cumulative sums at each cut."""

    per_layer: dict[str, int]
    prefix: dict[str, int]
    total: int

    def suffix(self, cut: str) -> int:
        return self.total - self.prefix[cut]

    def prefix_gflops(self, cut: str) -> float:
        return self.prefix[cut] / 1e9

    def suffix_gflops(self, cut: str) -> float:
        return self.suffix(cut) / 1e9


def count_flops(graph: LayerGraph) -> FlopCount:
    """FLOPs per layer (2 per MAC) and prefix sums per cut."""
    per_layer = {layer.name: layer.flops for layer in graph.layers}
    trunk_flops = [layer.flops for layer in graph.trunk]
    prefix = {cut: sum(trunk_flops[:idx]) for cut, idx in graph.cut_points.items()}
    return FlopCount(per_layer=per_layer, prefix=prefix, total=sum(per_layer.values()))


def describe_rows(graph: LayerGraph) -> list[dict[str, Any]]:
    """Rows of the ``describe-model`` CSV, one per cut."""
    flops = count_flops(graph)
    rows = []
    for cut, idx in graph.cut_points.items():
        rows.append({
            "cut": cut,
            "layer_index": idx,
            "out_shape": "x".join(str(d) for d in graph.activation_shape(idx)),
            "payload_bytes": cut_payload_bytes(graph, cut),
            "prefix_flops": flops.prefix[cut],
            "suffix_flops": flops.suffix(cut),
        })
    return rows
