"""Every layer's backward pass against central finite differences, plus a
naive-loop convolution oracle for the forward values."""

import numpy as np
import pytest

from crosspose.layers import (
    Conv1x1, Conv2d, ConvTranspose2x2, Dense, GlobalAvgPool, ReLU, SqueezeExcite,
)

from oracles import numeric_grad

RNG = np.random.default_rng(7)


def conv2d_by_hand(x, w, b, stride, pad):
    n, c, h, ww = x.shape
    co, ci, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, ho, wo))
    for ni in range(n):
        for o in range(co):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for ci_ in range(ci):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += w[o, ci_, a, bb] * xp[ni, ci_, i * stride + a, j * stride + bb]
                    out[ni, o, i, j] = acc
    return out


def check_layer_grads(layer, x, n_checks=8, tol=2e-4):
    def loss():
        y, _ = layer.forward(x)
        return float((y ** 2).sum())

    y, cache = layer.forward(x)
    dx, grads = layer.backward(2.0 * y, cache)

    rng = np.random.default_rng(3)
    for name, g in grads.items():
        arr = layer.params[name]
        for _ in range(n_checks):
            idx = tuple(rng.integers(s) for s in arr.shape)
            fd = numeric_grad(loss, arr, idx)
            assert abs(g[idx] - fd) <= tol * max(abs(fd), 1.0), f"{name}{idx}: {g[idx]} vs {fd}"
    for _ in range(n_checks):
        idx = tuple(rng.integers(s) for s in x.shape)
        fd = numeric_grad(loss, x, idx)
        assert abs(dx[idx] - fd) <= tol * max(abs(fd), 1.0), f"dx{idx}: {dx[idx]} vs {fd}"


def test_conv2d_matches_naive_loops():
    x = RNG.normal(size=(2, 3, 6, 6))
    layer = Conv2d(3, 4, RNG, kernel=3, stride=2, pad=1)
    y, _ = layer.forward(x)
    expected = conv2d_by_hand(x, layer.params["W"], layer.params["b"], 2, 1)
    np.testing.assert_allclose(y, expected, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_grads(stride):
    layer = Conv2d(2, 3, RNG, kernel=3, stride=stride, pad=1)
    check_layer_grads(layer, RNG.normal(size=(2, 2, 6, 6)))


def test_conv1x1_grads():
    check_layer_grads(Conv1x1(3, 5, RNG), RNG.normal(size=(2, 3, 4, 4)))


def test_transpose_conv_doubles_spatial_dims():
    layer = ConvTranspose2x2(3, 5, RNG)
    y, _ = layer.forward(RNG.normal(size=(2, 3, 4, 6)))
    assert y.shape == (2, 5, 8, 12)


def test_transpose_conv_grads():
    check_layer_grads(ConvTranspose2x2(2, 3, RNG), RNG.normal(size=(2, 2, 3, 3)))


def test_dense_grads():
    check_layer_grads(Dense(6, 4, RNG), RNG.normal(size=(3, 6)))


def test_gap_grads():
    check_layer_grads(GlobalAvgPool(), RNG.normal(size=(2, 3, 4, 4)))


def test_relu_grads():
    check_layer_grads(ReLU(), RNG.normal(size=(2, 3, 4, 4)) + 0.1)


def test_squeeze_excite_grads():
    check_layer_grads(SqueezeExcite(4, RNG), RNG.normal(size=(2, 4, 3, 3)))
