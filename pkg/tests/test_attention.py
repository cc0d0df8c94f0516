import numpy as np
import pytest

from exprnet import gradcheck
from exprnet.attention import CBAM, SEBlock, hidden_width, sigmoid
from exprnet.rng import Rng


def test_hidden_width():
    assert hidden_width(5, 2) == 2
    assert hidden_width(1, 2) == 1


def test_se_equal_channels_equal_weights(rng):
    se = SEBlock(4, rng)
    x = np.repeat(np.random.default_rng(0).normal(size=(2, 1, 5, 5)), 4, axis=1)
    # identical descriptors only give identical weights when the excitation
    # treats channels symmetrically
    se.params["W1"][...] = se.params["W1"][:1]
    se.params["W2"][...] = se.params["W2"][:, :1]
    w = se.channel_weights(x)
    assert np.allclose(w, w[:, :1])


def test_se_weights_in_open_interval_and_scale(rng, nprng):
    se = SEBlock(5, rng, dtype=np.float64)
    x = nprng.normal(size=(3, 5, 6, 6)) * 4
    y = se.forward(x)
    w = se.channel_weights(x)
    assert np.all((w > 0) & (w < 1))
    assert np.allclose(y, x * w[:, :, None, None])


def test_se_hand_computation(rng):
    se = SEBlock(2, rng, reduction=2, dtype=np.float64)
    se.params["W1"][...] = 1
    se.params["W2"][...] = 1
    se.params["b1"][...] = 0
    se.params["b2"][...] = 0
    x = np.array([3.0, 5.0]).reshape(1, 2, 1, 1)
    s = 1 / (1 + np.exp(-8.0))
    assert np.allclose(se.forward(x).reshape(-1), [3 * s, 5 * s], rtol=1e-14)


def test_se_zero_input(rng):
    se = SEBlock(5, rng)
    x = np.zeros((2, 5, 4, 4), np.float32)
    assert np.all(se.channel_weights(x) == 0.5)
    assert np.all(se.forward(x) == 0)


def test_se_constant_channels_depend_only_on_means(rng, nprng):
    se = SEBlock(5, rng, dtype=np.float64)
    means = nprng.normal(size=(1, 5))
    a = np.broadcast_to(means[:, :, None, None], (1, 5, 3, 3)).copy()
    b = np.broadcast_to(means[:, :, None, None], (1, 5, 8, 8)).copy()
    assert np.allclose(se.channel_weights(a), se.channel_weights(b), rtol=1e-14, atol=0)


def test_cbam_spatially_constant_input_uniform_map(rng, nprng):
    cbam = CBAM(5, rng, dtype=np.float64)
    vals = nprng.normal(size=(2, 5, 1, 1))
    x = np.broadcast_to(vals, (2, 5, 12, 12)).copy()
    _, ms = cbam.maps(x)
    # zero padding makes the border differ; the interior is uniform
    interior = ms[:, :, 3:-3, 3:-3]
    assert np.allclose(interior, interior[:, :, :1, :1])


def test_cbam_maps_shapes_and_range(rng, nprng):
    cbam = CBAM(5, rng)
    x = nprng.normal(size=(2, 5, 9, 9)).astype(np.float32)
    mc, ms = cbam.maps(x)
    assert mc.shape == (2, 5, 1, 1) and ms.shape == (2, 1, 9, 9)
    assert np.all((mc > 0) & (mc < 1)) and np.all((ms > 0) & (ms < 1))


def test_cbam_preserves_full_size_shape(rng):
    cbam = CBAM(5, rng)
    x = np.random.default_rng(1).random((2, 5, 111, 111)).astype(np.float32)
    assert cbam.forward(x).shape == (2, 5, 111, 111)


def test_se_preserves_shape(rng):
    assert SEBlock(5, rng).forward(np.ones((2, 5, 111, 111), np.float32)).shape == (2, 5, 111, 111)


@pytest.mark.parametrize("t", range(10))
def test_cbam_gradcheck_1x2x8x8(t):
    r = Rng(700 + t)
    cbam = CBAM(2, r, dtype=np.float64)
    gradcheck._randomize(cbam, r)
    x = gradcheck._distinct(r, (1, 2, 8, 8)) * 0.3
    assert gradcheck.check_layer(cbam, x, r) <= 1e-5


@pytest.mark.parametrize("t", range(10))
def test_se_gradcheck(t):
    r = Rng(800 + t)
    se = SEBlock(5, r, dtype=np.float64)
    gradcheck._randomize(se, r)
    assert gradcheck.check_layer(se, r.normal((2, 5, 6, 6)), r) <= 1e-5


def test_sigmoid_stable():
    z = np.array([-1000.0, -3.0, 0.0, 3.0, 1000.0])
    with np.errstate(over="raise"):
        s = sigmoid(z)
    assert np.allclose(s[1:4], 1 / (1 + np.exp(-z[1:4])), rtol=1e-14)
    assert s[0] == 0.0 and s[2] == 0.5 and s[4] == 1.0
