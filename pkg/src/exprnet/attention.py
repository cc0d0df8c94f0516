"""Channel and spatial attention blocks: Squeeze-and-Excitation and CBAM.

Both blocks are shape preserving and carry their own explicit backward pass.
Internals are evaluated in float64 and cast back to the storage dtype.
"""
from __future__ import annotations

import numpy as np

from .nn import Conv2D, Layer, he_normal
from .rng import Rng


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def hidden_width(channels: int, reduction: int) -> int:
    return max(1, channels // reduction)


class _SharedMLP:
    """Two-layer bottleneck ``c -> hidden -> c`` with a ReLU in between."""

    def __init__(self, layer: Layer, channels, hidden, rng, dtype):
        layer._add_param("W1", he_normal(rng, (channels, hidden), channels, dtype))
        layer._add_param("b1", np.zeros(hidden, dtype=dtype))
        layer._add_param("W2", he_normal(rng, (hidden, channels), hidden, dtype))
        layer._add_param("b2", np.zeros(channels, dtype=dtype))
        self.p = layer.params

    def forward(self, v):
        z1 = v @ self.p["W1"].astype(np.float64) + self.p["b1"]
        h = np.maximum(z1, 0)
        return h @ self.p["W2"].astype(np.float64) + self.p["b2"], (v, z1, h)

    def backward(self, dz2, cache, grads):
        v, z1, h = cache
        grads["W2"] += h.T @ dz2
        grads["b2"] += dz2.sum(axis=0)
        dz1 = (dz2 @ self.p["W2"].astype(np.float64).T) * (z1 > 0)
        grads["W1"] += v.T @ dz1
        grads["b1"] += dz1.sum(axis=0)
        return dz1 @ self.p["W1"].astype(np.float64).T


def _cast(grads, params):
    return {k: g.astype(params[k].dtype) for k, g in grads.items()}


class SEBlock(Layer):
    """Squeeze (global average pool), excite (bottleneck MLP + sigmoid),
    then rescale each channel by its weight in (0, 1)."""

    kind = "se"

    def __init__(self, channels, rng: Rng, reduction=2, dtype=np.float32):
        super().__init__()
        self.channels, self.reduction = channels, reduction
        self.mlp = _SharedMLP(self, channels, hidden_width(channels, reduction), rng, dtype)

    def channel_weights(self, x):
        s = x.astype(np.float64).mean(axis=(2, 3))
        z2, _ = self.mlp.forward(s)
        return sigmoid(z2)

    def _forward(self, x, train):
        x64 = x.astype(np.float64)
        s = x64.mean(axis=(2, 3))
        z2, mlp_cache = self.mlp.forward(s)
        a = sigmoid(z2)
        y = x64 * a[:, :, None, None]
        return y.astype(x.dtype), (x64, a, mlp_cache)

    def _backward(self, dy, cache):
        x64, a, mlp_cache = cache
        dy64 = dy.astype(np.float64)
        grads = {k: np.zeros(v.shape) for k, v in self.params.items()}
        dx = dy64 * a[:, :, None, None]
        da = (dy64 * x64).sum(axis=(2, 3))
        ds = self.mlp.backward(da * a * (1 - a), mlp_cache, grads)
        hw = x64.shape[2] * x64.shape[3]
        dx += ds[:, :, None, None] / hw
        return dx.astype(dy.dtype), _cast(grads, self.params)


class CBAM(Layer):
    """Channel attention from avg- and max-pooled descriptors through a
    shared MLP, followed by spatial attention from a 7x7 convolution over
    the channel-wise mean and max maps."""

    kind = "cbam"

    def __init__(self, channels, rng: Rng, reduction=2, kernel=7, dtype=np.float32):
        super().__init__()
        self.channels, self.reduction = channels, reduction
        self.mlp = _SharedMLP(self, channels, hidden_width(channels, reduction), rng, dtype)
        self.spatial = Conv2D(2, 1, kernel, rng, dtype=np.float64, padding=kernel // 2)
        self._add_param("spatial_W", self.spatial.params["W"].astype(dtype))
        self._add_param("spatial_b", np.zeros(1, dtype=dtype))

    def _conv(self):
        self.spatial.params["W"] = self.params["spatial_W"].astype(np.float64)
        self.spatial.params["b"] = self.params["spatial_b"].astype(np.float64)
        return self.spatial

    def maps(self, x):
        """Return the channel map [n,c,1,1] and spatial map [n,1,h,w]."""
        _, cache = self._forward(x, False)
        return cache["mc"][:, :, None, None], cache["ms"]

    def _forward(self, x, train):
        n, c, h, w = x.shape
        x64 = x.astype(np.float64)
        flat = x64.reshape(n, c, h * w)
        avg = flat.mean(axis=2)
        gmp_idx = flat.argmax(axis=2)
        mx = np.take_along_axis(flat, gmp_idx[..., None], axis=2)[..., 0]
        za, ca = self.mlp.forward(avg)
        zm, cm = self.mlp.forward(mx)
        mc = sigmoid(za + zm)
        x1 = x64 * mc[:, :, None, None]
        cmax_idx = x1.argmax(axis=1)
        feat = np.stack([x1.mean(axis=1),
                         np.take_along_axis(x1, cmax_idx[:, None], axis=1)[:, 0]], axis=1)
        zs, conv_cache = self._conv()._forward(feat, train)
        ms = sigmoid(zs)
        y = x1 * ms
        cache = dict(x=x64, gmp_idx=gmp_idx, ca=ca, cm=cm, mc=mc, x1=x1,
                     cmax_idx=cmax_idx, conv=conv_cache, ms=ms)
        return y.astype(x.dtype), cache

    def _backward(self, dy, cache):
        n, c, h, w = cache["x"].shape
        dy64 = dy.astype(np.float64)
        x1, ms, mc = cache["x1"], cache["ms"], cache["mc"]
        grads = {k: np.zeros(v.shape) for k, v in self.params.items()}

        # spatial stage
        dx1 = dy64 * ms
        dzs = (dy64 * x1).sum(axis=1, keepdims=True) * ms * (1 - ms)
        dfeat, conv_grads = self._conv()._backward(dzs, cache["conv"])
        grads["spatial_W"] += conv_grads["W"]
        grads["spatial_b"] += conv_grads["b"]
        dx1 += dfeat[:, 0:1] / c
        dmax = np.zeros_like(x1)
        np.put_along_axis(dmax, cache["cmax_idx"][:, None], dfeat[:, 1:2], axis=1)
        dx1 += dmax

        # channel stage
        x64 = cache["x"]
        dx = dx1 * mc[:, :, None, None]
        dmc = (dx1 * x64).sum(axis=(2, 3))
        dz = dmc * mc * (1 - mc)
        davg = self.mlp.backward(dz, cache["ca"], grads)
        dmx = self.mlp.backward(dz, cache["cm"], grads)
        dx += davg[:, :, None, None] / (h * w)
        dflat = dx.reshape(n, c, h * w)
        np.add.at(dflat, (np.arange(n)[:, None], np.arange(c)[None, :], cache["gmp_idx"]), dmx)
        return dx.astype(dy.dtype), _cast(grads, self.params)
