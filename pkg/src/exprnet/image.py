"""8-bit RGB image helpers shared by the data and augmentation code.

Images are ``uint8`` arrays of shape ``(height, width, 3)``.
"""
from __future__ import annotations

import numpy as np

from .errors import ContractError


def check_image(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3 or min(img.shape[:2]) < 1:
        raise ContractError(f"expected a (h, w, 3) uint8 image, got {img.dtype} {img.shape}")
    return img


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half up and clamp to [0, 255]."""
    return np.clip(np.floor(np.asarray(values, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def _axis_weights(n_in: int, n_out: int):
    # half-pixel centres, edge clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of the first two axes of a float array."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (height, width):
        return arr.copy()
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    extra = (None,) * (arr.ndim - 2)
    fy = fy[(slice(None), None) + extra]
    fx = fx[(None, slice(None)) + extra]
    top = arr[y0][:, x0] * (1 - fx) + arr[y0][:, x1] * fx
    bot = arr[y1][:, x0] * (1 - fx) + arr[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    check_image(img)
    if img.shape[:2] == (size, size):
        return img.copy()
    return to_uint8(resize_bilinear(img, size, size))


def to_tensor(images, dtype=np.float32) -> np.ndarray:
    """Stack images into a ``[n, 3, h, w]`` batch scaled to [0, 1]."""
    batch = np.stack([np.asarray(im) for im in images]).astype(dtype)
    return np.ascontiguousarray(batch.transpose(0, 3, 1, 2) / np.array(255, dtype=dtype))
