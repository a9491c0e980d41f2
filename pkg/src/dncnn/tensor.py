"""Dense 4-D tensors.

A tensor is a contiguous, row-major numpy array of shape
(batch, channel, height, width) in one of two precisions: float32
("single", used for training and inference) or float64 ("double", used
by the finite-difference gradient oracles). These helpers are the public
contract; the rest of the package operates on the same arrays directly.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, SizeError

Tensor = np.ndarray

DTYPES = {"single": np.float32, "double": np.float64}
_PRECISION_OF = {np.dtype(np.float32): "single", np.dtype(np.float64): "double"}

# refuse shapes whose element count cannot be addressed comfortably
_MAX_ELEMENTS = 2**40

_EW_OPS = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def precision_of(a: Tensor) -> str:
    try:
        return _PRECISION_OF[a.dtype]
    except KeyError:
        raise TypeError(f"unsupported tensor dtype {a.dtype}") from None


def check_4d(a: Tensor, name: str = "tensor") -> None:
    if a.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (n, c, h, w), got shape {a.shape}")


def tensor_new(shape, fill: float = 0.0, precision: str = "single") -> Tensor:
    """Allocate an (n, c, h, w) tensor filled with a constant."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != 4:
        raise ShapeError(f"shape must have 4 dimensions, got {shape}")
    if any(d < 0 for d in shape):
        raise SizeError(f"dimensions must be nonnegative, got {shape}")
    count = 1
    for d in shape:
        count *= d
    if count > _MAX_ELEMENTS:
        raise SizeError(f"shape {shape} exceeds addressable size")
    return np.full(shape, fill, dtype=DTYPES[precision])


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise add/sub/mul of two equal-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    try:
        fn = _EW_OPS[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a, b)


def scale(a: Tensor, s: float) -> Tensor:
    return a * a.dtype.type(s)


def frobenius_sq(a: Tensor) -> float:
    """Sum of squared elements (the squared Frobenius norm).

    Accumulates in double precision so the value is stable regardless of
    the tensor's own precision.
    """
    return float(np.sum(np.square(a, dtype=np.float64)))
