"""Numeric kernels on 4-D ``[batch, channels, height, width]`` arrays.

Tensors are plain :class:`numpy.ndarray` objects in float32 (training) or
float64 (gradient checking). Reductions and products accumulate in float64
and round back to the storage dtype of their inputs.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

STORAGE_DTYPES = (np.float32, np.float64)


def tensor4(data, dtype=np.float32) -> np.ndarray:
    """Return ``data`` as a contiguous 4-D array of a supported storage dtype."""
    dtype = np.dtype(dtype)
    if dtype.type not in STORAGE_DTYPES:
        raise ContractError(f"unsupported storage dtype {dtype}")
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim != 4:
        raise ContractError(f"expected a 4-D tensor, got shape {arr.shape}")
    return arr


def offset(shape, i, j, y, x) -> int:
    """Flat row-major offset of element (i, j, y, x)."""
    _, c, h, w = shape
    return ((i * c + j) * h + y) * w + x


def _storage(*arrays):
    return np.result_type(*arrays, np.float32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)
    return out.astype(_storage(a, b), copy=False)


def conv_out_size(size: int, kernel: int, stride: int = 1) -> int:
    return (size - kernel) // stride + 1


def im2col(x: np.ndarray, kernel: int, stride: int = 1) -> np.ndarray:
    """Unfold patches into a ``(c*k*k, n*h_out*w_out)`` matrix.

    Rows run over (channel, ky, kx) and columns over (sample, oy, ox).
    """
    if x.ndim != 4:
        raise ContractError(f"im2col expects a 4-D tensor, got {x.shape}")
    n, c, h, w = x.shape
    if kernel > h or kernel > w or kernel < 1:
        raise ContractError(f"kernel {kernel} does not fit input {h}x{w}")
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kernel * kernel, n * ho * wo)


def col2im(cols: np.ndarray, shape, kernel: int, stride: int = 1) -> np.ndarray:
    """Scatter-add columns back onto an image of ``shape``; adjoint of im2col."""
    n, c, h, w = shape
    ho, wo = conv_out_size(h, kernel, stride), conv_out_size(w, kernel, stride)
    if cols.shape != (c * kernel * kernel, n * ho * wo):
        raise ContractError(f"col2im got {cols.shape} for image {tuple(shape)}, k={kernel}")
    blocks = cols.reshape(c, kernel, kernel, n, ho, wo)
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for ky in range(kernel):
        for kx in range(kernel):
            out[:, :, ky:ky + stride * ho:stride, kx:kx + stride * wo:stride] += \
                blocks[:, ky, kx].transpose(1, 0, 2, 3)
    return out


def moments(x: np.ndarray):
    """Per-channel mean and biased variance over batch and space."""
    if x.ndim != 4:
        raise ContractError(f"moments expects a 4-D tensor, got {x.shape}")
    if x.size == 0:
        raise ContractError("moments of an empty tensor")
    x64 = np.asarray(x, dtype=np.float64)
    mean = x64.mean(axis=(0, 2, 3))
    var = np.square(x64 - mean[None, :, None, None]).mean(axis=(0, 2, 3))
    return mean.astype(x.dtype), var.astype(x.dtype)


def _align(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    b = np.asarray(b)
    if b.shape == a.shape:
        return b
    if a.ndim == 4 and b.shape in ((a.shape[1],), (1, a.shape[1], 1, 1)):
        return b.reshape(1, a.shape[1], 1, 1)
    raise ContractError(f"incompatible shapes {a.shape} and {b.shape}")


def add(a: np.ndarray, b) -> np.ndarray:
    return (a + _align(a, b)).astype(a.dtype, copy=False)


def mul(a: np.ndarray, b) -> np.ndarray:
    return (a * _align(a, b)).astype(a.dtype, copy=False)


def scale(x: np.ndarray, factors) -> np.ndarray:
    """Multiply each channel by its own scalar; ``factors`` has length c."""
    factors = np.asarray(factors, dtype=x.dtype)
    if factors.ndim == 0:
        return x * factors
    return mul(x, factors)


def apply(fn, x: np.ndarray) -> np.ndarray:
    return np.asarray(fn(x), dtype=x.dtype)
