import itertools

import numpy as np
import pytest

from exprnet import tensor
from exprnet.errors import ContractError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for r in range(a.shape[0]):
        for s in range(b.shape[1]):
            out[r, s] = sum(float(a[r, k]) * float(b[k, s]) for k in range(a.shape[1]))
    return out


def direct_conv(x, w):
    n, c, h, wd = x.shape
    co, _, k, _ = w.shape
    out = np.zeros((n, co, h - k + 1, wd - k + 1))
    for i, o, y, xx in itertools.product(range(n), range(co), range(h - k + 1), range(wd - k + 1)):
        out[i, o, y, xx] = np.sum(x[i, :, y:y + k, xx:xx + k] * w[o])
    return out


def test_offset_roundtrip():
    shape = (2, 3, 4, 5)
    arr = np.arange(np.prod(shape)).reshape(shape)
    for idx in itertools.product(*(range(s) for s in shape)):
        assert arr.reshape(-1)[tensor.offset(shape, *idx)] == arr[idx]


def test_tensor4_rejects_bad_input():
    with pytest.raises(ContractError):
        tensor.tensor4(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        tensor.tensor4(np.zeros((1, 1, 1, 1)), dtype=np.int32)


def test_matmul_identity_and_hand_example():
    m = np.arange(9, dtype=np.float32).reshape(3, 3)
    assert np.array_equal(tensor.matmul(np.eye(3, dtype=np.float32), m), m)
    out = tensor.matmul(np.array([[1, 2], [3, 4]], np.float32), np.array([[5], [6]], np.float32))
    assert out.tolist() == [[17], [39]]


def test_matmul_against_triple_loop(nprng):
    a = nprng.normal(size=(7, 5)).astype(np.float32)
    b = nprng.normal(size=(5, 4)).astype(np.float32)
    assert np.abs(tensor.matmul(a, b) - naive_matmul(a, b)).max() < 1e-5
    a64, b64 = a.astype(np.float64), b.astype(np.float64)
    assert np.abs(tensor.matmul(a64, b64) - naive_matmul(a64, b64)).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ContractError, match=r"\(2, 3\).*\(2, 3\)"):
        tensor.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_im2col_whole_image():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    cols = tensor.im2col(x, 3)
    assert cols.shape == (9, 1)
    assert np.array_equal(cols[:, 0], x.reshape(-1))


def test_im2col_columns_are_patches(nprng):
    x = nprng.normal(size=(1, 1, 4, 4))
    cols = tensor.im2col(x, 3)
    assert cols.shape == (9, 4)
    for t, (y, xx) in enumerate(itertools.product(range(2), range(2))):
        assert np.array_equal(cols[:, t], x[0, 0, y:y + 3, xx:xx + 3].reshape(-1))


def test_im2col_kernel_too_large():
    with pytest.raises(ContractError):
        tensor.im2col(np.zeros((1, 1, 2, 2)), 3)


def test_col2im_unit_kernel_identity(nprng):
    x = nprng.normal(size=(2, 3, 4, 5))
    assert np.array_equal(tensor.col2im(tensor.im2col(x, 1), x.shape, 1), x)


def test_col2im_is_adjoint(nprng):
    for shape, k in [((2, 3, 6, 5), 3), ((1, 2, 7, 7), 2), ((3, 1, 5, 5), 5)]:
        x = nprng.normal(size=shape)
        cols = tensor.im2col(x, k)
        y = nprng.normal(size=cols.shape)
        lhs = np.sum(cols * y)
        rhs = np.sum(x * tensor.col2im(y, shape, k))
        assert abs(lhs - rhs) < 1e-10


def test_im2col_matmul_equals_direct_conv_sweep(nprng):
    for n, c, h, w, k in itertools.product((1, 2), (1, 2, 3), range(3, 9, 2), range(3, 9, 2), (1, 2, 3)):
        x = nprng.normal(size=(n, c, h, w))
        wt = nprng.normal(size=(2, c, k, k))
        cols = tensor.im2col(x, k)
        y = tensor.matmul(wt.reshape(2, -1), cols)
        ho, wo = h - k + 1, w - k + 1
        y = y.reshape(2, n, ho, wo).transpose(1, 0, 2, 3)
        assert np.abs(y - direct_conv(x, wt)).max() < 1e-10


def test_moments_examples(nprng):
    mean, var = tensor.moments(np.full((2, 3, 2, 2), 5.0))
    assert np.allclose(mean, 5) and np.allclose(var, 0)
    x = np.array([0.0, 2.0, 0.0, 2.0]).reshape(1, 1, 2, 2)
    mean, var = tensor.moments(x)
    assert mean[0] == 1 and var[0] == 1

    x = nprng.normal(size=(2, 3, 4, 4))
    mean, var = tensor.moments(x)
    for j in range(3):
        vals = x[:, j].reshape(-1)
        m = sum(vals) / len(vals)
        v = sum((t - m) ** 2 for t in vals) / len(vals)
        assert abs(mean[j] - m) <= 1e-6 * abs(m) + 1e-15
        assert abs(var[j] - v) <= 1e-6 * v


def test_moments_empty():
    with pytest.raises(ContractError):
        tensor.moments(np.zeros((0, 2, 2, 2)))


def test_elementwise(nprng):
    x = nprng.normal(size=(1, 2, 2, 2)).astype(np.float32)
    assert np.array_equal(tensor.add(x, np.zeros_like(x)), x)
    assert np.array_equal(tensor.mul(x, np.ones_like(x)), x)
    y = tensor.scale(x, [2, 3])
    assert np.array_equal(y[:, 0], 2 * x[:, 0]) and np.array_equal(y[:, 1], 3 * x[:, 1])
    assert np.array_equal(tensor.apply(np.abs, x), np.abs(x))
    with pytest.raises(ContractError):
        tensor.add(x, np.zeros((1, 3, 2, 2)))
