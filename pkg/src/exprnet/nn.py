"""Layers with explicit forward/backward passes, and the softmax loss.

Every layer keeps its trainable tensors in ``params`` with a same-shaped
accumulator in ``grads``. ``forward`` caches what ``backward`` needs;
``backward`` consumes that cache, so it can run at most once per forward.
The pure ``_forward``/``_backward`` pair lets callers (Grad-CAM, gradient
checks) run a pass with their own caches and gradient buffers.
"""
from __future__ import annotations

import numpy as np

from . import tensor
from .errors import ContractError
from .rng import Rng


def he_normal(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self):
        self.name = self.kind
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def _add_param(self, key, value):
        self.params[key] = value
        self.grads[key] = np.zeros_like(value)

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state that must survive a checkpoint."""
        return {}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def forward(self, x, train: bool = False):
        y, self._cache = self._forward(x, train)
        return y

    def backward(self, dy):
        if self._cache is None:
            raise ContractError(f"{self.name}: backward called without a cached forward")
        cache, self._cache = self._cache, None
        dx, grads = self._backward(dy, cache)
        for key, g in grads.items():
            self.grads[key] += g
        return dx

    def _forward(self, x, train):
        raise NotImplementedError

    def _backward(self, dy, cache):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class Conv2D(Layer):
    """Square-kernel convolution, stride 1, via im2col and one matmul."""

    kind = "conv"

    def __init__(self, cin, cout, kernel, rng: Rng, dtype=np.float32, padding=0, bias=True):
        super().__init__()
        self.cin, self.cout, self.kernel, self.padding = cin, cout, kernel, padding
        self._add_param("W", he_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype))
        if bias:
            self._add_param("b", np.zeros(cout, dtype=dtype))

    def output_shape(self, shape):
        n, _, h, w = shape
        p = 2 * self.padding
        return (n, self.cout, h + p - self.kernel + 1, w + p - self.kernel + 1)

    def _forward(self, x, train):
        if x.ndim != 4 or x.shape[1] != self.cin:
            raise ContractError(f"{self.name}: input {x.shape} does not match weights "
                                f"{self.params['W'].shape}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        n, _, h, w = xp.shape
        if self.kernel > min(h, w):
            raise ContractError(f"{self.name}: kernel {self.kernel} larger than input {h}x{w}")
        cols = tensor.im2col(xp, self.kernel)
        W = self.params["W"].reshape(self.cout, -1)
        y = tensor.matmul(W, cols)
        if "b" in self.params:
            y += self.params["b"][:, None]
        ho, wo = h - self.kernel + 1, w - self.kernel + 1
        y = y.reshape(self.cout, n, ho, wo).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(y, dtype=x.dtype), (xp.shape, cols)

    def _backward(self, dy, cache):
        xp_shape, cols = cache
        dmat = dy.transpose(1, 0, 2, 3).reshape(self.cout, -1)
        W = self.params["W"]
        grads = {"W": tensor.matmul(dmat, cols.T).reshape(W.shape)}
        if "b" in self.params:
            grads["b"] = dmat.sum(axis=1, dtype=np.float64).astype(W.dtype)
        dcols = tensor.matmul(W.reshape(self.cout, -1).T, dmat)
        dx = tensor.col2im(dcols, xp_shape, self.kernel)
        p = self.padding
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return np.ascontiguousarray(dx), grads


class BatchNorm2D(Layer):
    """Per-channel batch normalization with running statistics for eval."""

    kind = "batchnorm"

    def __init__(self, channels, dtype=np.float32, eps=1e-5, momentum=0.1):
        super().__init__()
        if eps <= 0:
            raise ContractError("batch-norm epsilon must be positive")
        self.eps, self.momentum = eps, momentum
        self._add_param("gamma", np.ones(channels, dtype=dtype))
        self._add_param("beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def _forward(self, x, train):
        gamma = self.params["gamma"].astype(np.float64)[None, :, None, None]
        beta = self.params["beta"].astype(np.float64)[None, :, None, None]
        x64 = x.astype(np.float64)
        if train:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            if count < 2:
                raise ContractError(f"{self.name}: train mode needs at least 2 values per channel")
            mean = x64.mean(axis=(0, 2, 3))
            var = np.square(x64 - mean[None, :, None, None]).mean(axis=(0, 2, 3))
            m = self.momentum
            self.running_mean[...] = (1 - m) * self.running_mean + m * mean
            self.running_var[...] = (1 - m) * self.running_var + m * var * count / (count - 1)
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x64 - mean[None, :, None, None]) * inv_std[None, :, None, None]
        y = (gamma * xhat + beta).astype(x.dtype)
        return y, (xhat, inv_std, train)

    def _backward(self, dy, cache):
        xhat, inv_std, train = cache
        dy64 = dy.astype(np.float64)
        dtype = self.params["gamma"].dtype
        grads = {
            "gamma": (dy64 * xhat).sum(axis=(0, 2, 3)).astype(dtype),
            "beta": dy64.sum(axis=(0, 2, 3)).astype(dtype),
        }
        dxhat = dy64 * self.params["gamma"].astype(np.float64)[None, :, None, None]
        if train:
            count = xhat.shape[0] * xhat.shape[2] * xhat.shape[3]
            dx = (count * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                  - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
            dx *= inv_std[None, :, None, None] / count
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx.astype(dy.dtype), grads


class ReLU(Layer):
    kind = "relu"

    def _forward(self, x, train):
        mask = x > 0
        return np.where(mask, x, 0).astype(x.dtype), mask

    def _backward(self, dy, mask):
        return np.where(mask, dy, 0).astype(dy.dtype), {}


class MaxPool2D(Layer):
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool"

    def _forward(self, x, train):
        n, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ContractError(f"{self.name}: input {h}x{w} too small to pool")
        h2, w2 = h // 2, w // 2
        blocks = (x[:, :, :2 * h2, :2 * w2]
                  .reshape(n, c, h2, 2, w2, 2)
                  .transpose(0, 1, 2, 4, 3, 5)
                  .reshape(n, c, h2, w2, 4))
        # argmax returns the first maximum: row-major tie-breaking
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx)

    def _backward(self, dy, cache):
        shape, idx = cache
        n, c, h, w = shape
        h2, w2 = h // 2, w // 2
        blocks = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
        np.put_along_axis(blocks, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape, dtype=dy.dtype)
        dx[:, :, :2 * h2, :2 * w2] = (blocks.reshape(n, c, h2, w2, 2, 2)
                                      .transpose(0, 1, 2, 4, 3, 5)
                                      .reshape(n, c, 2 * h2, 2 * w2))
        return dx, {}


class Dense(Layer):
    """Fully connected layer ``y = xW + b`` with an optional fused ReLU."""

    kind = "dense"

    def __init__(self, din, dout, rng: Rng, dtype=np.float32, activation=None):
        super().__init__()
        if activation not in (None, "relu"):
            raise ContractError(f"unknown activation {activation!r}")
        self.din, self.dout, self.activation = din, dout, activation
        self._add_param("W", he_normal(rng, (din, dout), din, dtype))
        self._add_param("b", np.zeros(dout, dtype=dtype))

    def _forward(self, x, train):
        if x.ndim != 2 or x.shape[1] != self.din:
            raise ContractError(f"{self.name}: input {x.shape} does not match weights "
                                f"{self.params['W'].shape}")
        y = tensor.matmul(x, self.params["W"]) + self.params["b"]
        mask = None
        if self.activation == "relu":
            mask = y > 0
            y = np.where(mask, y, 0).astype(y.dtype)
        return y, (x, mask)

    def _backward(self, dy, cache):
        x, mask = cache
        if mask is not None:
            dy = np.where(mask, dy, 0).astype(dy.dtype)
        W = self.params["W"]
        grads = {
            "W": tensor.matmul(x.T, dy),
            "b": dy.sum(axis=0, dtype=np.float64).astype(W.dtype),
        }
        return tensor.matmul(dy, W.T), grads


class Dropout(Layer):
    """Inverted dropout; masks come from the layer's own generator."""

    kind = "dropout"

    def __init__(self, rate, rng: Rng):
        super().__init__()
        if not 0 <= rate < 1:
            raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng

    def _forward(self, x, train):
        if not train or self.rate == 0:
            return x, None
        keep = self.rng.random(x.shape) >= self.rate
        mask = keep.astype(x.dtype) / x.dtype.type(1 - self.rate)
        return x * mask, mask

    def _backward(self, dy, mask):
        return (dy if mask is None else dy * mask), {}


class Flatten(Layer):
    kind = "flatten"

    def _forward(self, x, train):
        return x.reshape(x.shape[0], -1), x.shape

    def _backward(self, dy, shape):
        return dy.reshape(shape), {}


def unflatten(x: np.ndarray, shape) -> np.ndarray:
    return x.reshape(shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: np.ndarray, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must be {n} class indices in [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), labels]))
    grad = np.exp(z - logsum[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)
