"""Forward and backward passes for the three layer building blocks.

Convolution is 3x3 cross-correlation with zero padding 1 and stride 1,
so spatial size is preserved everywhere. The heavy lifting is a single
GEMM per call: the input is unfolded into columns (im2col) and matrix-
multiplied with the flattened kernels. The input gradient reuses the
forward path with transposed, 180-degree-rotated kernels, which for this
padding is exactly the full correlation the chain rule asks for.

Batch normalization uses biased per-channel batch statistics over
(n, h, w); inference normalizes by running statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatchError, ShapeError, UsageError
from .tensor import DTYPES, Tensor

KERNEL = 3
BN_EPS = 1e-4
BN_MOMENTUM = 0.9


@dataclass
class ConvParams:
    """3x3 convolution weights (c_out, c_in, 3, 3) and optional per-channel bias."""

    weights: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        if self.weights.ndim != 4 or self.weights.shape[2:] != (KERNEL, KERNEL):
            raise ShapeError(
                f"conv weights must be (c_out, c_in, {KERNEL}, {KERNEL}), "
                f"got {self.weights.shape}"
            )
        if self.bias is not None and self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias must have shape ({self.weights.shape[0]},), got {self.bias.shape}"
            )

    @property
    def c_out(self) -> int:
        return self.weights.shape[0]

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]


@dataclass
class BatchNormParams:
    """Per-channel scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ShapeError(f"{name} must match gamma shape {c}")
        if np.any(self.running_var < 0):
            raise ValueError("running_var must be nonnegative")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class BNCache:
    """Train-mode forward intermediates needed by the backward pass."""

    normalized: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def _im2col(x: Tensor) -> np.ndarray:
    """Unfold zero-padded 3x3 windows into a (n*h*w, c_in*9) matrix."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # (n,c,h,w,3,3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def conv2d_forward(x: Tensor, params: ConvParams) -> Tensor:
    """Same-size 3x3 cross-correlation with zero padding 1, stride 1."""
    n, c, h, w = x.shape
    if c != params.c_in:
        raise ShapeError(
            f"input has {c} channels, conv expects {params.c_in}"
        )
    cols = _im2col(x)
    wmat = params.weights.reshape(params.c_out, -1)
    out = cols @ wmat.T.astype(x.dtype, copy=False)
    if params.bias is not None:
        out += params.bias.astype(x.dtype, copy=False)
    return out.reshape(n, h, w, params.c_out).transpose(0, 3, 1, 2).copy()


def conv2d_backward(x: Tensor, params: ConvParams, grad_out: Tensor, need_input: bool = True):
    """Gradients of sum(grad_out * conv2d_forward(x)) w.r.t. x, weights, bias.

    grad_input is the full correlation of grad_out with the transposed,
    180-degree-rotated kernels, which with padding 1 is just another
    same-size forward pass. Pass need_input=False to skip it when the
    input is a leaf.
    """
    n, c, h, w = x.shape
    if c != params.c_in:
        raise ShapeError(f"input has {c} channels, conv expects {params.c_in}")
    if grad_out.shape != (n, params.c_out, h, w):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match "
            f"output shape {(n, params.c_out, h, w)}"
        )
    cols = _im2col(x)
    gmat = grad_out.transpose(0, 2, 3, 1).reshape(n * h * w, params.c_out)
    grad_weights = (gmat.T @ cols).reshape(params.weights.shape)
    grad_bias = grad_out.sum(axis=(0, 2, 3)) if params.bias is not None else None
    grad_input = None
    if need_input:
        rotated = params.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_input = conv2d_forward(grad_out, ConvParams(np.ascontiguousarray(rotated)))
    return grad_input, grad_weights, grad_bias


def batchnorm_forward(x: Tensor, params: BatchNormParams, mode: str):
    """Normalize per channel; returns (output, cache, updated params).

    Train mode normalizes by batch statistics over (n, h, w) (biased
    variance) and folds them into fresh running statistics. Infer mode
    normalizes by the running statistics, returns an empty cache and the
    params unchanged.
    """
    n, c, h, w = x.shape
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, batchnorm expects {params.channels}")
    gamma = params.gamma.reshape(1, c, 1, 1).astype(x.dtype, copy=False)
    beta = params.beta.reshape(1, c, 1, 1).astype(x.dtype, copy=False)

    if mode == "infer":
        inv_std = 1.0 / np.sqrt(params.running_var + params.eps)
        inv_std = inv_std.reshape(1, c, 1, 1).astype(x.dtype, copy=False)
        mean = params.running_mean.reshape(1, c, 1, 1).astype(x.dtype, copy=False)
        out = (x - mean) * inv_std * gamma + beta
        return out, None, params
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")

    m = n * h * w
    if m < 2:
        raise DegenerateBatchError(
            f"batch statistics need at least 2 values per channel, got {m}"
        )
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.dtype.type(params.eps))
    normalized = (x - mean) * inv_std
    out = normalized * gamma + beta

    mom = params.momentum
    updated = BatchNormParams(
        gamma=params.gamma,
        beta=params.beta,
        running_mean=mom * params.running_mean + (1.0 - mom) * mean.ravel(),
        running_var=mom * params.running_var + (1.0 - mom) * var.ravel(),
        eps=params.eps,
        momentum=params.momentum,
    )
    cache = BNCache(normalized=normalized, inv_std=inv_std, gamma=params.gamma)
    return out, cache, updated


def batchnorm_backward(cache: BNCache, grad_out: Tensor):
    """Analytic gradients through train-mode batch normalization."""
    if cache is None:
        raise UsageError("batchnorm_backward needs a train-mode cache")
    xhat = cache.normalized
    if grad_out.shape != xhat.shape:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match cached {xhat.shape}"
        )
    n, c, h, w = grad_out.shape
    m = n * h * w
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))

    gamma = cache.gamma.reshape(1, c, 1, 1).astype(grad_out.dtype, copy=False)
    dxhat = grad_out * gamma
    # accounts for the batch statistics' own dependence on the input
    grad_input = (cache.inv_std / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    )
    return grad_input, grad_gamma, grad_beta


def relu_forward(x: Tensor):
    """max(0, x); the mask records strictly positive inputs."""
    mask = x > 0
    return np.where(mask, x, x.dtype.type(0)), mask


def relu_backward(mask: np.ndarray, grad_out: Tensor) -> Tensor:
    """Gate grad_out by the forward mask (gradient at exactly 0 is 0)."""
    if mask.shape != grad_out.shape:
        raise ShapeError(f"mask shape {mask.shape} vs grad {grad_out.shape}")
    return np.where(mask, grad_out, grad_out.dtype.type(0))


def he_init(shape, rng: np.random.Generator, precision: str = "single") -> np.ndarray:
    """Zero-mean Gaussian weights with std sqrt(2 / fan_in) for ReLU nets."""
    c_out, c_in, kh, kw = shape
    std = np.sqrt(2.0 / (c_in * kh * kw))
    w = rng.standard_normal(size=shape) * std
    return w.astype(DTYPES[precision])
