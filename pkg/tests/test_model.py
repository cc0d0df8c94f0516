import numpy as np
import pytest

from exprnet import gradcheck
from exprnet.errors import ConfigError, ContractError
from exprnet.model import (ModelConfig, build_model, count_parameters, experiment_configs,
                           forward_logits, grad_cam)
from exprnet.nn import softmax_xent
from exprnet.rng import Rng

FULL_SIZE_TRACE = [(3, 224), (5, 222), (5, 111), (11, 109), (11, 54)]


def test_experiment_configs():
    cfgs = experiment_configs()
    assert len(cfgs) == 8
    _, c1 = cfgs[0]
    assert not c1.use_batchnorm and not c1.use_dropout and c1.attention is None
    name, c7 = cfgs[6]
    assert c7.attention == "se" and c7.use_batchnorm and c7.use_dropout
    assert "Experiment 7" in name
    expected = [(False, False, None), (False, False, "se"), (False, False, "cbam"),
                (True, False, None), (False, True, None), (True, True, None),
                (True, True, "se"), (True, True, "cbam")]
    assert [(c.use_batchnorm, c.use_dropout, c.attention) for _, c in cfgs] == expected


def test_layer_inventory():
    counts = build_model(experiment_configs()[0][1]).layer_counts()
    assert counts == {"conv": 2, "relu": 2, "maxpool": 2, "flatten": 1, "dense": 3}
    counts7 = build_model(experiment_configs()[6][1]).layer_counts()
    assert counts7 == {**counts, "batchnorm": 2, "dropout": 3, "se": 1}


def test_layer_order_all_toggles():
    net = build_model(experiment_configs()[6][1])
    assert [l.name for l in net.layers] == [
        "conv1", "bn1", "relu1", "pool1", "attention", "conv2", "bn2", "relu2", "pool2",
        "drop1", "flatten", "dense1", "drop2", "dense2", "drop3", "dense3"]
    assert [net.layer(n).activation for n in ("dense1", "dense2", "dense3")] == ["relu", "relu", None]


@pytest.mark.parametrize("index", range(8))
def test_shape_trace_every_config(index):
    net = build_model(experiment_configs()[index][1])
    trace = dict(net.trace(np.zeros((1, 3, 224, 224), np.float32), train=False))
    assert trace["conv1"] == (1, 5, 222, 222)
    assert trace["pool1"] == (1, 5, 111, 111)
    assert trace["conv2"] == (1, 11, 109, 109)
    assert trace["pool2"] == (1, 11, 54, 54)
    assert trace["flatten"] == (1, 32076)
    assert trace["dense1"] == (1, 128) and trace["dense2"] == (1, 64)
    assert trace["dense3"] == (1, 2)


def test_seed_determinism():
    a = build_model(ModelConfig(seed=42, attention="cbam", use_batchnorm=True))
    b = build_model(ModelConfig(seed=42, attention="cbam", use_batchnorm=True))
    for (_, pa, _), (_, pb, _) in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa, pb)
    c = build_model(ModelConfig(seed=43))
    assert not np.array_equal(c.layer("conv1").params["W"], a.layer("conv1").params["W"])


def test_toggles_do_not_change_shared_init():
    a = build_model(ModelConfig(seed=5))
    b = build_model(ModelConfig(seed=5, attention="se", use_dropout=True))
    assert np.array_equal(a.layer("conv2").params["W"], b.layer("conv2").params["W"])
    assert np.array_equal(a.layer("dense3").params["W"], b.layer("dense3").params["W"])


def test_parameter_count_experiment_1():
    cfg = ModelConfig(dense_widths=(128, 64))
    expected = (5 * 3 * 3 * 3 + 5) + (11 * 5 * 3 * 3 + 11) + \
        (32076 * 128 + 128 + 128 * 64 + 64 + 64 * 2 + 2)
    assert count_parameters(cfg) == expected
    assert build_model(cfg).num_parameters() == expected
    for _, c in experiment_configs():
        assert build_model(c).num_parameters() == count_parameters(c)


def test_forward_logits_shape_and_purity():
    net = build_model(experiment_configs()[7][1])
    x = np.random.default_rng(0).random((4, 3, 224, 224)).astype(np.float32)
    y1 = forward_logits(net, x)
    y2 = forward_logits(net, x)
    assert y1.shape == (4, 2)
    assert np.array_equal(y1, y2)


def test_zero_input_finite():
    net = build_model(ModelConfig(seed=1))
    y = forward_logits(net, np.zeros((2, 3, 224, 224), np.float32))
    assert np.all(np.isfinite(y))
    assert np.array_equal(y, forward_logits(net, np.zeros((2, 3, 224, 224), np.float32)))


def test_wrong_input_shape():
    net = build_model(ModelConfig(input_size=32))
    with pytest.raises(ContractError):
        forward_logits(net, np.zeros((1, 3, 31, 32), np.float32))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(num_classes=3)
    with pytest.raises(ConfigError):
        ModelConfig(attention="eca")
    with pytest.raises(ConfigError):
        ModelConfig(dense_widths=(0, 4))


def test_loss_shift_invariance():
    logits = np.random.default_rng(3).normal(size=(6, 2))
    labels = np.array([0, 1, 1, 0, 1, 0])
    l1, g1 = softmax_xent(logits, labels)
    l2, g2 = softmax_xent(logits + 17.5, labels)
    assert l1 == pytest.approx(l2, abs=1e-12)
    assert np.allclose(g1, g2)
    assert np.array_equal(logits.argmax(1), (logits + 17.5).argmax(1))


@pytest.mark.parametrize("index", range(8))
def test_full_model_gradcheck(index):
    for t in range(3):
        assert gradcheck.check_model(Rng(31 * index + t), index=index) <= gradcheck.MODEL_TOL


def test_grad_cam_range_shape_and_private_grads():
    net = build_model(experiment_configs()[6][1])
    for _, _, g in net.parameters():
        g[...] = 3.0
    x = np.random.default_rng(2).random((1, 3, 224, 224)).astype(np.float32)
    for target in (0, 1):
        cam = grad_cam(net, x, target)
        assert cam.shape == (224, 224)
        assert cam.min() >= 0 and cam.max() <= 1
    assert all(np.all(g == 3.0) for _, _, g in net.parameters())
    with pytest.raises(ContractError):
        grad_cam(net, x, 2)


def test_grad_cam_constant_feature_maps_give_uniform_heatmap():
    net = build_model(ModelConfig(input_size=32, seed=4))
    conv2 = net.layer("conv2")
    conv2.params["W"][...] = 0
    conv2.params["b"][...] = np.linspace(0.5, 1.5, 11)
    x = np.random.default_rng(5).random((1, 3, 32, 32)).astype(np.float32)
    cams = [grad_cam(net, x, t) for t in (0, 1)]
    assert grad_cam(net, x, 0, size=32).shape == (32, 32)
    for cam in cams:
        assert cam.shape == (224, 224)
        assert np.allclose(cam, cam[0, 0])
    # exactly one class has a positive weighted sum; the other is rectified away
    assert {float(c[0, 0]) for c in cams} <= {0.0, 1.0}
