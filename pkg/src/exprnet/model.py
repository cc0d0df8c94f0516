"""The two-stage expression CNN, its experiment matrix, and Grad-CAM."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import CBAM, SEBlock
from .errors import ConfigError, ContractError
from .image import resize_bilinear
from .nn import BatchNorm2D, Conv2D, Dense, Dropout, Flatten, MaxPool2D, ReLU
from .rng import Rng

CLASS_NAMES = ("happy", "sad")
ATTENTION_KINDS = (None, "se", "cbam")

# substream indices for parameter init and dropout masks; fixed per slot so
# toggling one stage never changes the initial weights of another
_SLOTS = {"conv1": 1, "conv2": 2, "dense1": 3, "dense2": 4, "dense3": 5,
          "attention": 6, "drop1": 7, "drop2": 8, "drop3": 9}


@dataclass
class ModelConfig:
    use_batchnorm: bool = False
    use_dropout: bool = False
    attention: Optional[str] = None
    dense_widths: tuple = (128, 64)
    dropout_rates: tuple = (0.25, 0.5, 0.5)
    input_size: int = 224
    num_classes: int = 2
    seed: int = 0
    reduction: int = 2
    precision: str = "float32"

    def __post_init__(self):
        self.dense_widths = tuple(int(d) for d in self.dense_widths)
        self.dropout_rates = tuple(float(p) for p in self.dropout_rates)
        if self.attention is not None:
            self.attention = str(self.attention).lower()
            if self.attention == "none":
                self.attention = None
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of none/se/cbam, got {self.attention!r}")
        if self.num_classes != 2:
            raise ConfigError("the network is a two-class classifier")
        if len(self.dense_widths) != 2 or min(self.dense_widths) < 1:
            raise ConfigError(f"dense_widths must be two positive ints, got {self.dense_widths}")
        if len(self.dropout_rates) != 3 or not all(0 <= p < 1 for p in self.dropout_rates):
            raise ConfigError("dropout_rates must be three values in [0, 1)")
        if self.input_size < 10:
            raise ConfigError("input_size must be at least 10 to survive both conv stages")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")

    @property
    def dtype(self):
        return np.dtype(self.precision)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["dense_widths"] = list(self.dense_widths)
        d["dropout_rates"] = list(self.dropout_rates)
        return d


def feature_shapes(input_size: int):
    """Spatial trace (channels, side) after each body stage."""
    s1 = input_size - 2
    p1 = s1 // 2
    s2 = p1 - 2
    p2 = s2 // 2
    return [(3, input_size), (5, s1), (5, p1), (11, s2), (11, p2)]


def flat_features(input_size: int) -> int:
    c, s = feature_shapes(input_size)[-1]
    return c * s * s


class ExpressionNet:
    """Conv(3->5) [BN] ReLU Pool [Attn] Conv(5->11) [BN] ReLU Pool [Drop]
    Flatten Dense+ReLU [Drop] Dense+ReLU [Drop] Dense(->2)."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dtype = config.dtype
        root = Rng(config.seed)

        def rng(slot):
            return root.child(_SLOTS[slot])

        d1, d2 = config.dense_widths
        p0, p1, p2 = config.dropout_rates
        layers = [("conv1", Conv2D(3, 5, 3, rng("conv1"), dtype))]
        if config.use_batchnorm:
            layers.append(("bn1", BatchNorm2D(5, dtype)))
        layers += [("relu1", ReLU()), ("pool1", MaxPool2D())]
        if config.attention == "se":
            layers.append(("attention", SEBlock(5, rng("attention"), config.reduction, dtype)))
        elif config.attention == "cbam":
            layers.append(("attention", CBAM(5, rng("attention"), config.reduction, dtype=dtype)))
        layers.append(("conv2", Conv2D(5, 11, 3, rng("conv2"), dtype)))
        if config.use_batchnorm:
            layers.append(("bn2", BatchNorm2D(11, dtype)))
        layers += [("relu2", ReLU()), ("pool2", MaxPool2D())]
        if config.use_dropout:
            layers.append(("drop1", Dropout(p0, rng("drop1"))))
        layers += [("flatten", Flatten()),
                   ("dense1", Dense(flat_features(config.input_size), d1, rng("dense1"), dtype, "relu"))]
        if config.use_dropout:
            layers.append(("drop2", Dropout(p1, rng("drop2"))))
        layers.append(("dense2", Dense(d1, d2, rng("dense2"), dtype, "relu")))
        if config.use_dropout:
            layers.append(("drop3", Dropout(p2, rng("drop3"))))
        layers.append(("dense3", Dense(d2, config.num_classes, rng("dense3"), dtype)))
        for name, layer in layers:
            layer.name = name
        self.layers = [layer for _, layer in layers]

    @property
    def dtype(self):
        return self.config.dtype

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def layer_counts(self) -> dict:
        counts: dict = {}
        for layer in self.layers:
            counts[layer.kind] = counts.get(layer.kind, 0) + 1
        return counts

    def check_input(self, x):
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ContractError(f"expected input [n, 3, {s}, {s}], got {tuple(x.shape)}")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x, train=False):
        x = self.check_input(x)
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits):
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def trace(self, x, train=False):
        """Forward pass returning ``[(layer name, output shape), ...]``."""
        x = self.check_input(x)
        shapes = [("input", x.shape)]
        for layer in self.layers:
            x, _ = layer._forward(x, train)
            shapes.append((layer.name, x.shape))
        return shapes

    def parameters(self):
        """Yield ``(qualified name, param, grad)`` in a fixed order."""
        for layer in self.layers:
            for key, p in layer.params.items():
                yield f"{layer.name}.{key}", p, layer.grads[key]

    def buffers(self):
        for layer in self.layers:
            for key, b in layer.buffers().items():
                yield f"{layer.name}.{key}", b

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def rng_states(self) -> dict:
        return {l.name: l.rng.getstate() for l in self.layers if isinstance(l, Dropout)}

    def set_rng_states(self, states: dict):
        for l in self.layers:
            if isinstance(l, Dropout):
                l.rng.setstate(states[l.name])


def build_model(config: ModelConfig) -> ExpressionNet:
    return ExpressionNet(config)


def count_parameters(config: ModelConfig) -> int:
    """Closed-form parameter count, independent of any built network."""
    c = config.reduction
    d1, d2 = config.dense_widths
    total = (5 * 3 * 9 + 5) + (11 * 5 * 9 + 11)
    total += flat_features(config.input_size) * d1 + d1 + d1 * d2 + d2 + d2 * 2 + 2
    if config.use_batchnorm:
        total += 2 * 5 + 2 * 11
    if config.attention is not None:
        hid = max(1, 5 // c)
        total += 5 * hid + hid + hid * 5 + 5
        if config.attention == "cbam":
            total += 2 * 49 + 1
    return total


def forward_logits(net: ExpressionNet, batch, train=False) -> np.ndarray:
    """Raw class scores ``[n, 2]``; column 0 is happy, column 1 sad."""
    return net.forward(batch, train)


def predict(net: ExpressionNet, batch) -> np.ndarray:
    return forward_logits(net, batch).argmax(axis=1)


EXPERIMENT_NAMES = (
    "Experiment 1: Without Regularization",
    "Experiment 2: With Attention Block (SE Block)",
    "Experiment 3: With CBAM (Channel + Spatial Attention)",
    "Experiment 4: With BatchNorm",
    "Experiment 5: With Dropout",
    "Experiment 6: With BatchNorm and Dropout",
    "Experiment 7: With BatchNorm, Dropout, and SE Attention",
    "Experiment 8: With BatchNorm, Dropout, and CBAM Attention",
)

_TOGGLES = (
    (False, False, None),
    (False, False, "se"),
    (False, False, "cbam"),
    (True, False, None),
    (False, True, None),
    (True, True, None),
    (True, True, "se"),
    (True, True, "cbam"),
)


def experiment_configs(base: Optional[ModelConfig] = None):
    """The eight ablation configs as ``[(name, ModelConfig), ...]``."""
    base = base or ModelConfig()
    return [(name, base.replace(use_batchnorm=bn, use_dropout=dp, attention=att))
            for name, (bn, dp, att) in zip(EXPERIMENT_NAMES, _TOGGLES)]


HEATMAP_SIZE = 224


def grad_cam(net: ExpressionNet, image, target_class: int, layer: str = "relu2",
             size: int = HEATMAP_SIZE) -> np.ndarray:
    """Class-activation heatmap in [0, 1], bilinearly upsampled to ``size``
    squared (224 by default, whatever the model's input resolution).

    Runs its own eval-mode pass with private caches, so neither the
    training caches nor the accumulated parameter gradients are touched.
    """
    if target_class not in (0, 1):
        raise ContractError(f"target_class must be 0 or 1, got {target_class}")
    x = net.check_input(np.asarray(image).reshape(1, *np.shape(image)[-3:]))
    caches, acts = [], None
    split = [l.name for l in net.layers].index(layer)
    for i, l in enumerate(net.layers):
        x, cache = l._forward(x, False)
        caches.append(cache)
        if i == split:
            acts = x[0].astype(np.float64)
    d = np.zeros_like(x)
    d[0, target_class] = 1
    for l, cache in zip(reversed(net.layers[split + 1:]), reversed(caches[split + 1:])):
        d, _ = l._backward(d, cache)
    weights = d[0].astype(np.float64).mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts, axes=1), 0)
    cam = np.maximum(resize_bilinear(cam, size, size), 0)
    peak = cam.max()
    return cam / peak if peak > 0 else np.zeros((size, size))
