"""Central finite-difference checks of every layer's analytic backward pass.

All checks run in float64. A layer is scored by the max-norm relative error
``max|analytic - numeric| / max(max|analytic|, max|numeric|, FLOOR)`` taken
over its input gradient and each parameter gradient; the worst tensor is
reported. The floor covers gradients that vanish identically (a conv bias
feeding batch-norm), where only finite-difference noise would remain.
"""
from __future__ import annotations

import numpy as np

from .attention import CBAM, SEBlock
from .model import ModelConfig, build_model
from .nn import BatchNorm2D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU, softmax_xent
from .rng import Rng

STEP = 1e-5
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4
FLOOR = 1e-5


def rel_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), FLOOR)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_grad(f, x, step=STEP, coords=None):
    """Central differences of scalar ``f()`` w.r.t. ``x``, perturbed in place.

    Returns ``(flat indices, derivatives)``; all entries unless ``coords``.
    """
    flat = x.reshape(-1)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.empty(idx.size)
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2 * step)
    return idx, out


def _pick(rng: Rng, size, limit):
    if limit is None or size <= limit:
        return None
    return np.sort(rng.permutation(size)[:limit])


def check_layer(layer, x, rng: Rng, train=True, limit=None) -> float:
    """Worst relative error of ``layer`` on input ``x`` under loss sum(y * R)."""
    x = np.array(x, dtype=np.float64)
    rng_state = layer.rng.getstate() if isinstance(layer, Dropout) else None

    def run():
        if rng_state is not None:
            layer.rng.setstate(rng_state)
        y, cache = layer._forward(x, train)
        return y, cache

    y, cache = run()
    proj = rng.normal(y.shape)
    dx, grads = layer._backward(proj, cache)

    def loss():
        return float(np.sum(run()[0] * proj))

    worst = 0.0
    for target, analytic in [(x, dx)] + [(layer.params[k], g) for k, g in grads.items()]:
        idx, num = numeric_grad(loss, target, coords=_pick(rng, target.size, limit))
        worst = max(worst, rel_error(np.asarray(analytic).reshape(-1)[idx], num))
    return worst


def _away_from_zero(rng, shape, margin=1e-3):
    v = rng.normal(shape)
    return np.sign(v) * (np.abs(v) + 10 * margin)


def _distinct(rng, shape):
    """Values whose pairwise gaps are at least 1e-2 (no near-ties for max)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * 1e-2 + rng.uniform(0, 1e-3, n) - n * 5e-3).reshape(shape)


def _dims(rng):
    return int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(4, 8))


def check_conv(rng):
    n, c, s = _dims(rng)
    layer = Conv2D(c, int(rng.integers(1, 4)), 3, rng, dtype=np.float64)
    layer.params["b"][:] = rng.normal(layer.params["b"].shape)
    return check_layer(layer, rng.normal((n, c, s, s)), rng)


def check_batchnorm(rng):
    n, c, s = _dims(rng)
    layer = BatchNorm2D(c, np.float64)
    layer.params["gamma"][:] = rng.uniform(0.5, 1.5, c)
    layer.params["beta"][:] = rng.normal(c)
    return check_layer(layer, rng.normal((n + 1, c, s, s)) * 2 + 1, rng)


def check_relu(rng):
    n, c, s = _dims(rng)
    return check_layer(ReLU(), _away_from_zero(rng, (n, c, s, s)), rng)


def check_maxpool(rng):
    n, c, s = _dims(rng)
    return check_layer(MaxPool2D(), _distinct(rng, (n, c, s, s + 1)), rng)


def check_dense(rng):
    n, din, dout = int(rng.integers(1, 5)), int(rng.integers(1, 7)), int(rng.integers(1, 6))
    layer = Dense(din, dout, rng, np.float64)
    layer.params["b"][:] = rng.normal(dout)
    return check_layer(layer, rng.normal((n, din)), rng)


def check_dropout(rng):
    n, c, s = _dims(rng)
    return check_layer(Dropout(0.5, rng.child(1)), rng.normal((n, c, s, s)), rng)


def check_flatten(rng):
    n, c, s = _dims(rng)
    return check_layer(Flatten(), rng.normal((n, c, s, s)), rng)


def _randomize(layer, rng):
    for p in layer.params.values():
        p[...] = rng.normal(p.shape) * 0.7


def check_se(rng):
    n, c, s = _dims(rng)
    layer = SEBlock(c + 1, rng, dtype=np.float64)
    _randomize(layer, rng)
    return check_layer(layer, rng.normal((n, c + 1, s, s)), rng)


def check_cbam(rng):
    n, c, s = _dims(rng)
    layer = CBAM(c + 1, rng, dtype=np.float64)
    _randomize(layer, rng)
    return check_layer(layer, _distinct(rng, (n, c + 1, s + 2, s + 2)) * 0.3, rng)


def check_softmax_xent(rng):
    n = int(rng.integers(1, 6))
    logits = rng.normal((n, 2)) * 3
    labels = rng.integers(0, 2, n)
    _, analytic = softmax_xent(logits, labels)
    _, num = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits)
    return rel_error(analytic.reshape(-1), num)


def tiny_config(index: int, seed: int) -> ModelConfig:
    """Small clone of the network: 3x16x16 input, dense widths [8, 4].

    ``index`` walks the eight toggle combinations so every layer type is
    exercised inside the full stack.
    """
    from .model import _TOGGLES
    bn, dp, att = _TOGGLES[index % len(_TOGGLES)]
    return ModelConfig(use_batchnorm=bn, use_dropout=dp, attention=att, dense_widths=(8, 4),
                       input_size=16, seed=seed, precision="float64")


def check_model(rng, index=7, limit=12) -> float:
    """Full-network check on the true loss (train mode, dropout masks fixed)."""
    net = build_model(tiny_config(index, rng.next_u64()))
    for _, p, _ in net.parameters():
        if p.ndim == 1:
            p[...] = rng.normal(p.shape) * 0.1
    x = rng.uniform(0, 1, (3, 3, 16, 16))
    labels = rng.integers(0, 2, 3)
    states = net.rng_states()

    def loss():
        net.set_rng_states(states)
        return softmax_xent(net.forward(x, train=True), labels)[0]

    net.zero_grad()
    net.set_rng_states(states)
    _, dlogits = softmax_xent(net.forward(x, train=True), labels)
    dx = net.backward(dlogits)
    worst = 0.0
    targets = [(x, dx)] + [(p, g) for _, p, g in net.parameters()]
    for target, analytic in targets:
        idx, num = _smooth_sample(loss, target, rng, limit)
        if idx.size:
            worst = max(worst, rel_error(analytic.reshape(-1)[idx], num))
    return worst


KINK_TOL = 1e-6


def _smooth_sample(f, x, rng: Rng, limit):
    """Sample up to ``limit`` coordinates where ``f`` is smooth at scale STEP.

    Central differences at STEP and STEP/10 agree to O(STEP**2) on a smooth
    loss. A larger gap means the interval straddles a ReLU or max kink, where
    no finite difference is meaningful, so that coordinate is replaced.
    """
    keep_idx, keep_num = [], []
    for i in rng.permutation(x.size):
        (_,), (coarse,) = numeric_grad(f, x, STEP, coords=[i])
        (_,), (fine,) = numeric_grad(f, x, STEP / 10, coords=[i])
        if abs(coarse - fine) <= KINK_TOL * max(abs(coarse), abs(fine), 1.0):
            keep_idx.append(i)
            keep_num.append(coarse)
            if len(keep_idx) == limit:
                break
    order = np.argsort(keep_idx)
    return np.asarray(keep_idx, dtype=np.int64)[order], np.asarray(keep_num)[order]


LAYER_CHECKS = {
    "conv2d": check_conv,
    "batchnorm2d": check_batchnorm,
    "relu": check_relu,
    "maxpool2d": check_maxpool,
    "dense": check_dense,
    "dropout": check_dropout,
    "flatten": check_flatten,
    "se_block": check_se,
    "cbam": check_cbam,
    "softmax_xent": check_softmax_xent,
}


def run_suite(trials: int = 20, seed: int = 0) -> dict:
    """Worst relative error per layer over ``trials`` random draws, plus the
    full tiny model under each of the eight toggle combinations."""
    results = {}
    root = Rng(seed)
    for k, (name, fn) in enumerate(LAYER_CHECKS.items()):
        results[name] = max(fn(root.child(1000 * k + t)) for t in range(trials))
    results["full_model"] = max(check_model(root.child(99_000 + t), index=t) for t in range(trials))
    return results


def passed(results: dict) -> bool:
    return all(err <= (MODEL_TOL if name == "full_model" else LAYER_TOL)
               for name, err in results.items())
