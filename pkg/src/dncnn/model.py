"""Network assembly, whole-network forward/backward, and model files.

The network stacks three kinds of layers: Conv+ReLU first, Conv(+BN)+ReLU
in the middle, and a bare Conv last. With residual output enabled the
network predicts the corruption and the restored image is input minus
prediction; with it disabled the network predicts the clean image
directly (the ablation's original-mapping mode).

Convs followed by BN carry no bias (BN's shift subsumes it); without BN
every conv keeps its bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError, UsageError
from .layers import (
    BatchNormParams,
    BNCache,
    ConvParams,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    he_init,
    relu_backward,
    relu_forward,
)
from .rng import SeededRng
from .tensor import DTYPES, Tensor

MAGIC = b"DNCN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    depth: int
    hidden_channels: int = 64
    image_channels: int = 1
    use_bn: bool = True
    use_residual: bool = True

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.hidden_channels < 1:
            raise ValueError("hidden_channels must be positive")
        if self.image_channels not in (1, 3):
            raise ValueError(
                f"image_channels must be 1 or 3, got {self.image_channels}"
            )


@dataclass
class Layer:
    conv: ConvParams
    bn: BatchNormParams | None = None


@dataclass
class Model:
    spec: NetworkSpec
    layers: list[Layer]


@dataclass
class LayerTape:
    conv_input: Tensor
    bn_cache: BNCache | None
    relu_mask: np.ndarray | None


@dataclass
class Tape:
    entries: list[LayerTape]
    mode: str


@dataclass
class LayerGrads:
    weights: np.ndarray
    bias: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None


Gradients = list


def receptive_field(depth: int) -> int:
    """One output pixel sees a (2*depth+1) square of the input."""
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    return 2 * depth + 1


def build_network(spec: NetworkSpec, rng: SeededRng, precision: str = "single") -> Model:
    """He-initialized model; BN starts as the identity transform."""
    dtype = DTYPES[precision]
    layers = []
    for i in range(spec.depth):
        first = i == 0
        last = i == spec.depth - 1
        c_in = spec.image_channels if first else spec.hidden_channels
        c_out = spec.image_channels if last else spec.hidden_channels
        with_bn = spec.use_bn and not first and not last
        weights = he_init((c_out, c_in, 3, 3), rng.stream("init", i), precision)
        bias = None if with_bn else np.zeros(c_out, dtype=dtype)
        bn = None
        if with_bn:
            bn = BatchNormParams(
                gamma=np.ones(c_out, dtype=dtype),
                beta=np.zeros(c_out, dtype=dtype),
                running_mean=np.zeros(c_out, dtype=dtype),
                running_var=np.ones(c_out, dtype=dtype),
            )
        layers.append(Layer(conv=ConvParams(weights, bias), bn=bn))
    return Model(spec=spec, layers=layers)


def forward(model: Model, x: Tensor, mode: str = "infer"):
    """Run the full stack; returns (output, tape, model with updated BN stats).

    Infer mode leaves the model untouched and is pure. Train mode records
    a tape for backward() and returns a model whose BN running statistics
    absorbed this batch.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != 4 or x.shape[1] != model.spec.image_channels:
        raise ShapeError(
            f"input shape {x.shape} does not match image_channels="
            f"{model.spec.image_channels}"
        )
    depth = model.spec.depth
    entries = []
    new_layers = []
    cur = x
    for i, layer in enumerate(model.layers):
        conv_input = cur
        cur = conv2d_forward(cur, layer.conv)
        bn_cache = None
        new_bn = layer.bn
        if layer.bn is not None:
            cur, bn_cache, new_bn = batchnorm_forward(cur, layer.bn, mode)
        mask = None
        if i < depth - 1:
            cur, mask = relu_forward(cur)
        if mode == "train":
            entries.append(LayerTape(conv_input, bn_cache, mask))
            new_layers.append(Layer(conv=layer.conv, bn=new_bn))
    if mode == "infer":
        return cur, Tape(entries=[], mode="infer"), model
    return cur, Tape(entries=entries, mode="train"), Model(model.spec, new_layers)


def backward(model: Model, tape: Tape, grad_out: Tensor) -> Gradients:
    """Per-parameter gradients, ordered like model.layers."""
    if tape.mode != "train" or len(tape.entries) != len(model.layers):
        raise UsageError("backward needs the tape from a train-mode forward")
    grads: list[LayerGrads | None] = [None] * len(model.layers)
    g = grad_out
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        entry = tape.entries[i]
        if entry.relu_mask is not None:
            g = relu_backward(entry.relu_mask, g)
        grad_gamma = grad_beta = None
        if layer.bn is not None:
            g, grad_gamma, grad_beta = batchnorm_backward(entry.bn_cache, g)
        g, grad_w, grad_b = conv2d_backward(
            entry.conv_input, layer.conv, g, need_input=i > 0
        )
        grads[i] = LayerGrads(grad_w, grad_b, grad_gamma, grad_beta)
    return grads


def denoise(model: Model, noisy: Tensor) -> Tensor:
    """Restored image: input minus predicted corruption (residual mode)
    or the network output directly (original-mapping mode). Unclamped."""
    out, _, _ = forward(model, noisy, mode="infer")
    if model.spec.use_residual:
        return noisy - out
    return out


def trainable_arrays(model: Model):
    """Yield (layer_index, attr_owner, attr_name, kind) for every trainable
    parameter, in a fixed order shared with LayerGrads."""
    for i, layer in enumerate(model.layers):
        yield i, layer.conv, "weights", "weight"
        if layer.conv.bias is not None:
            yield i, layer.conv, "bias", "bias"
        if layer.bn is not None:
            yield i, layer.bn, "gamma", "gamma"
            yield i, layer.bn, "beta", "beta"


def grad_arrays(grads: Gradients):
    """Gradient arrays in the same order as trainable_arrays()."""
    for g in grads:
        yield g.weights
        if g.bias is not None:
            yield g.bias
        if g.gamma is not None:
            yield g.gamma
            yield g.beta


def parameter_count(model: Model) -> int:
    return sum(getattr(owner, name).size for _, owner, name, _ in trainable_arrays(model))


# ---------------------------------------------------------------------------
# model file format (little-endian):
#   "DNCN" | u32 version | u32 depth | u32 hidden | u32 image_channels
#   | u8 use_bn | u8 use_residual | 2 reserved bytes
# then per layer:
#   conv weights: u32 count, f32 * count
#   bias: u8 flag [u32 count, f32 * count]
#   bn: u8 flag [gamma, beta, running_mean, running_var each as
#                u32 count + f32 * count; f32 eps; f32 momentum]
# ---------------------------------------------------------------------------


def _pack_f32(values: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(values, dtype="<f4")
    return struct.pack("<I", arr.size) + arr.tobytes()


def save_model(model: Model, path) -> None:
    spec = model.spec
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack(
        "<IIIIBBxx",
        FORMAT_VERSION,
        spec.depth,
        spec.hidden_channels,
        spec.image_channels,
        int(spec.use_bn),
        int(spec.use_residual),
    )
    for layer in model.layers:
        blob += _pack_f32(layer.conv.weights)
        if layer.conv.bias is not None:
            blob += b"\x01" + _pack_f32(layer.conv.bias)
        else:
            blob += b"\x00"
        if layer.bn is not None:
            bn = layer.bn
            blob += b"\x01"
            for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                blob += _pack_f32(arr)
            blob += struct.pack("<ff", bn.eps, bn.momentum)
        else:
            blob += b"\x00"
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated model file while reading {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def f32(self, what: str) -> float:
        return struct.unpack("<f", self.take(4, what))[0]

    def f32_block(self, what: str, expected: int) -> np.ndarray:
        count = self.u32(f"{what} count")
        if count != expected:
            raise FormatError(
                f"{what} holds {count} values, expected {expected}", self.pos - 4
            )
        raw = self.take(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").copy()


def load_model(path) -> Model:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not a model file", 0)
    version = r.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", 4)
    depth = r.u32("depth")
    hidden = r.u32("hidden_channels")
    channels = r.u32("image_channels")
    use_bn = r.u8("use_bn")
    use_residual = r.u8("use_residual")
    r.take(2, "reserved")
    try:
        spec = NetworkSpec(depth, hidden, channels, bool(use_bn), bool(use_residual))
    except ValueError as exc:
        raise FormatError(f"invalid network description: {exc}", 8) from exc

    layers = []
    for i in range(depth):
        first, last = i == 0, i == depth - 1
        c_in = channels if first else hidden
        c_out = channels if last else hidden
        weights = r.f32_block(f"layer {i} weights", c_out * c_in * 9).reshape(
            c_out, c_in, 3, 3
        )
        bias = None
        if r.u8(f"layer {i} bias flag"):
            bias = r.f32_block(f"layer {i} bias", c_out)
        bn = None
        if r.u8(f"layer {i} bn flag"):
            gamma = r.f32_block(f"layer {i} gamma", c_out)
            beta = r.f32_block(f"layer {i} beta", c_out)
            rmean = r.f32_block(f"layer {i} running_mean", c_out)
            rvar = r.f32_block(f"layer {i} running_var", c_out)
            eps = r.f32(f"layer {i} eps")
            momentum = r.f32(f"layer {i} momentum")
            bn = BatchNormParams(gamma, beta, rmean, rvar, eps, momentum)
        layers.append(Layer(conv=ConvParams(weights, bias), bn=bn))
    if r.pos != len(data):
        raise FormatError(
            f"{len(data) - r.pos} unexpected trailing bytes", r.pos
        )
    return Model(spec=spec, layers=layers)
