"""Thin array helpers on top of numpy.

Tensors are plain ``numpy.ndarray`` objects. Feature maps use the
``(height, width, channels, batch)`` axis order throughout the package.
"""

import numpy as np

from .errors import DimensionError, EmptyInputError

DTYPE = np.float32
CHECK_DTYPE = np.float64


def as_tensor(data, dtype=DTYPE):
    a = np.asarray(data, dtype=dtype)
    if any(d < 1 for d in a.shape):
        raise DimensionError(f"every extent must be >= 1, got shape {a.shape}")
    return a


def as_feature_map(x):
    """Validate a rank-4 ``(p, q, r, s)`` feature map and return it."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise DimensionError(f"feature map must be rank 4 (h, w, c, n), got rank {x.ndim}")
    if any(d < 1 for d in x.shape):
        raise DimensionError(f"feature map has an empty axis: {x.shape}")
    return x


def strides_for(shape):
    """Row-major element strides for ``shape``."""
    strides = [1] * len(shape)
    for i in range(len(shape) - 2, -1, -1):
        strides[i] = strides[i + 1] * shape[i + 1]
    return strides


def linear_index(coord, shape):
    if len(coord) != len(shape):
        raise DimensionError("coordinate rank does not match shape")
    return sum(int(i) * s for i, s in zip(coord, strides_for(shape)))


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


_BINARY = {
    "add": np.add,
    "mul": np.multiply,
    "max": np.maximum,
}


def elementwise(op, a, b=None):
    """Apply ``op`` per element. ``b`` must match ``a``'s shape or be a scalar."""
    a = np.asarray(a)
    if op == "relu":
        return np.maximum(a, 0)
    if op == "scale":
        if not np.isscalar(b):
            raise DimensionError("scale expects a scalar factor")
        return a * b
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    if not np.isscalar(b):
        b = np.asarray(b)
        if b.shape != a.shape:
            raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return _BINARY[op](a, b)


def relu(x):
    return np.maximum(x, 0)


def argmax(a):
    """Index of the maximum; ties go to the smallest index."""
    a = np.asarray(a)
    if a.ndim != 1:
        raise DimensionError("argmax expects a rank-1 tensor")
    if a.size == 0:
        raise EmptyInputError("argmax of an empty tensor")
    # np.argmax already returns the first occurrence
    return int(np.argmax(a))
