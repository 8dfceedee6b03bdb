"""Gradient checks for every layer type against central finite differences.

The whole training stack depends on these backward passes, so each one is
checked in float64 on tiny instances, plus an independent naive-loop conv
oracle and the im2col/col2im adjointness identity.
"""

import numpy as np
import pytest

from zsda.nn import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Flatten,
    LeakyReLU,
    ReLU,
    Reshape,
    Stack,
    Tanh,
    col2im,
    im2col,
    softmax,
    unique_params,
    zero_grads,
)

RNG = np.random.default_rng(20260811)


def fd_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f at array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return np.abs(a - b).max() / denom


def check_layer(layer, x, train=True, tol=1e-7):
    """Scalar loss = sum(y * r) for fixed random r; check dx and all dparams."""
    y0, _ = layer.forward(x, train=train, update_stats=False)
    r = np.random.default_rng(0).normal(size=y0.shape)

    def loss():
        y, _ = layer.forward(x, train=train, update_stats=False)
        return float((y * r).sum())

    zero_grads(layer.params())
    y, cache = layer.forward(x, train=train, update_stats=False)
    dx = layer.backward(cache, r.astype(x.dtype))

    assert rel_err(dx, fd_grad(loss, x)) < tol
    for p in layer.params():
        assert rel_err(p.grad, fd_grad(loss, p.value)) < tol, p.name


def test_dense_grad():
    rng = np.random.default_rng(1)
    layer = Dense(7, 5, rng, dtype=np.float64)
    check_layer(layer, rng.normal(size=(4, 7)))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1), (3, 2, 0)])
def test_conv2d_grad(k, stride, pad):
    rng = np.random.default_rng(2)
    layer = Conv2d(3, 4, k, stride, pad, rng, dtype=np.float64)
    check_layer(layer, rng.normal(size=(2, 8, 8, 3)))


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1)])
def test_conv_transpose2d_grad(k, stride, pad):
    rng = np.random.default_rng(3)
    layer = ConvTranspose2d(3, 4, k, stride, pad, rng, dtype=np.float64)
    check_layer(layer, rng.normal(size=(2, 5, 5, 3)))


def test_batchnorm_train_grad():
    rng = np.random.default_rng(4)
    layer = BatchNorm2d(3, rng, dtype=np.float64)
    check_layer(layer, rng.normal(size=(4, 5, 5, 3)), train=True, tol=1e-6)


def test_batchnorm_eval_grad():
    rng = np.random.default_rng(5)
    layer = BatchNorm2d(3, rng, dtype=np.float64)
    layer.running_mean[:] = rng.normal(size=3)
    layer.running_var[:] = rng.uniform(0.5, 2.0, size=3)
    check_layer(layer, rng.normal(size=(4, 5, 5, 3)), train=False)


def test_batchnorm_running_stats_update():
    rng = np.random.default_rng(6)
    layer = BatchNorm2d(2, rng)
    x = rng.normal(3.0, 2.0, size=(16, 4, 4, 2)).astype(np.float32)
    layer.forward(x, train=True, update_stats=True)
    assert not np.allclose(layer.running_mean, 0.0)
    frozen = layer.running_mean.copy()
    layer.forward(x, train=True, update_stats=False)
    np.testing.assert_array_equal(layer.running_mean, frozen)


@pytest.mark.parametrize("act", [LeakyReLU(0.2), ReLU(), Tanh()])
def test_activation_grads(act):
    rng = np.random.default_rng(7)
    # keep values away from the relu kink so finite differences are valid
    x = rng.normal(size=(3, 6))
    x[np.abs(x) < 1e-3] = 0.5
    check_layer(act, x)


def test_shape_layers_roundtrip():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 4, 4, 2))
    flat = Flatten()
    y, cache = flat.forward(x)
    assert y.shape == (3, 32)
    np.testing.assert_array_equal(flat.backward(cache, y), x)
    resh = Reshape((4, 4, 2))
    y2, cache2 = resh.forward(y)
    np.testing.assert_array_equal(y2, x)
    np.testing.assert_array_equal(resh.backward(cache2, x), y)


def naive_conv2d(x, w, b, stride, pad):
    """Independent 6-loop oracle for the im2col path (NHWC, w=(kh,kw,C,M))."""
    n, h, wd, c = x.shape
    kh, kw, _, m = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, ho, wo, m))
    for ni in range(n):
        for mi in range(m):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[ni, i * stride:i * stride + kh, j * stride:j * stride + kw, :]
                    y[ni, i, j, mi] = (patch * w[:, :, :, mi]).sum() + b[mi]
    return y


@pytest.mark.parametrize("k,stride,pad", [(3, 1, 1), (4, 2, 1)])
def test_conv2d_matches_naive_oracle(k, stride, pad):
    rng = np.random.default_rng(9)
    layer = Conv2d(2, 3, k, stride, pad, rng, dtype=np.float64)
    x = rng.normal(size=(2, 7, 7, 2))
    y, _ = layer.forward(x)
    expected = naive_conv2d(x, layer.w.value, layer.b.value, stride, pad)
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_conv_transpose_is_conv_adjoint():
    # <convT(x), y> == <x, conv(y)> when both use the same weight tensor
    rng = np.random.default_rng(10)
    ct = ConvTranspose2d(3, 2, 4, 2, 1, rng, dtype=np.float64)
    x = rng.normal(size=(2, 5, 5, 3))
    up, _ = ct.forward(x)
    up -= ct.b.value
    y = rng.normal(size=up.shape)
    lhs = (up * y).sum()
    rhs = 0.0
    for n in range(x.shape[0]):
        for c in range(3):
            for mch in range(2):
                # conv weight view (kh,kw,C_in=1,M=1) from convT weight (C,kh,kw,M)
                w_view = ct.w.value[c, :, :, mch][:, :, None, None]
                down = naive_conv2d(y[n:n + 1, :, :, mch:mch + 1], w_view, np.zeros(1), 2, 1)
                rhs += down[0, :, :, 0].ravel() @ x[n, :, :, c].ravel()
    assert abs(lhs - rhs) / max(abs(lhs), 1e-9) < 1e-10


def test_im2col_col2im_adjoint():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 6, 6, 3))
    cols = im2col(x, 3, 3, 2, 1)
    t = rng.normal(size=cols.shape)
    lhs = (cols * t).sum()
    rhs = (col2im(t, x.shape, 3, 3, 2, 1) * x).sum()
    assert abs(lhs - rhs) < 1e-10


def test_stack_backward_with_injection():
    """Gradient injected mid-stack must match finite differences."""
    rng = np.random.default_rng(12)
    stack = Stack([
        Dense(6, 5, rng, dtype=np.float64),
        Tanh(),
        Dense(5, 4, rng, dtype=np.float64),
        Tanh(),
        Dense(4, 2, rng, dtype=np.float64),
    ])
    x = rng.normal(size=(3, 6))
    r_top = rng.normal(size=(3, 2))
    r_mid = rng.normal(size=(3, 4))

    def loss():
        y, rec = stack.forward(x)
        return float((y * r_top).sum() + (rec.acts[3] * r_mid).sum())

    params = unique_params(stack.params())
    zero_grads(params)
    y, rec = stack.forward(x)
    stack.backward(rec, r_top, inject={3: r_mid})
    for p in params:
        assert rel_err(p.grad, fd_grad(loss, p.value)) < 1e-7


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(13)
    v = softmax(rng.normal(scale=10, size=(50, 7)))
    assert np.all(v >= 0)
    np.testing.assert_allclose(v.sum(axis=1), 1.0, atol=1e-6)


def test_tied_param_grads_accumulate():
    """Two layers sharing one Param must sum their gradient contributions."""
    rng = np.random.default_rng(14)
    a = Dense(4, 4, rng, dtype=np.float64)
    b = Dense(4, 4, rng, dtype=np.float64)
    b.w = a.w  # tie weight, keep separate biases
    x1 = rng.normal(size=(2, 4))
    x2 = rng.normal(size=(2, 4))

    def loss():
        y1, _ = a.forward(x1)
        y2, _ = b.forward(x2)
        return float((y1 ** 2).sum() + (y2 ** 2).sum())

    params = unique_params(a.params(), b.params())
    assert len(params) == 3
    zero_grads(params)
    y1, c1 = a.forward(x1)
    y2, c2 = b.forward(x2)
    a.backward(c1, 2 * y1)
    b.backward(c2, 2 * y2)
    assert rel_err(a.w.grad, fd_grad(loss, a.w.value)) < 1e-7
