"""Small numpy layers with hand-written backward passes.

Float64 throughout so analytic gradients can be checked against central
finite differences tightly. Layers are stateless between calls: forward
returns an explicit cache that backward consumes, which keeps read-only
inference safe to run concurrently on a frozen model.

Conventions: activations are (N, C, H, W); every layer exposes a
``params`` dict of name -> array and ``backward(dy, cache)`` returning
``(dx, grads)`` with grads keyed exactly like ``params``.
"""

from __future__ import annotations

import numpy as np

from .core import sigmoid


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


class Conv2d(Layer):
    """k x k convolution via im2col; He-initialized."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 kernel: int = 3, stride: int = 1, pad: int = 1):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = c_in * kernel * kernel
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, kernel, kernel))
        self.params["b"] = np.zeros(c_out)

    def _geometry(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        n, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        h_out, w_out = self._geometry(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        # (N, C, k*k, L) patches, L = h_out * w_out
        cols = np.empty((n, c, k * k, h_out * w_out), dtype=x.dtype)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            patch = xp[:, :, di:di + s * h_out:s, dj:dj + s * w_out:s]
            cols[:, :, idx, :] = patch.reshape(n, c, -1)
        cols = cols.reshape(n, c * k * k, -1)
        wm = self.params["W"].reshape(self.c_out, -1)
        y = np.einsum("of,nfl->nol", wm, cols) + self.params["b"][None, :, None]
        return y.reshape(n, self.c_out, h_out, w_out), (cols, x.shape)

    def backward(self, dy, cache):
        cols, x_shape = cache
        n, c, h, w = x_shape
        k, s, p = self.kernel, self.stride, self.pad
        h_out, w_out = self._geometry(h, w)
        dy_flat = dy.reshape(n, self.c_out, -1)
        wm = self.params["W"].reshape(self.c_out, -1)
        grads = {
            "W": np.einsum("nol,nfl->of", dy_flat, cols).reshape(self.params["W"].shape),
            "b": dy_flat.sum(axis=(0, 2)),
        }
        dcols = np.einsum("of,nol->nfl", wm, dy_flat).reshape(n, c, k * k, -1)
        dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for idx in range(k * k):
            di, dj = divmod(idx, k)
            dxp[:, :, di:di + s * h_out:s, dj:dj + s * w_out:s] += \
                dcols[:, :, idx, :].reshape(n, c, h_out, w_out)
        dx = dxp[:, :, p:p + h, p:p + w]
        return dx, grads


class Conv1x1(Layer):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_out, c_in))
        self.params["b"] = np.zeros(c_out)

    def forward(self, x):
        y = np.einsum("oc,nchw->nohw", self.params["W"], x) + self.params["b"][None, :, None, None]
        return y, x

    def backward(self, dy, cache):
        x = cache
        grads = {
            "W": np.einsum("nohw,nchw->oc", dy, x),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        dx = np.einsum("oc,nohw->nchw", self.params["W"], dy)
        return dx, grads


class ConvTranspose2x2(Layer):
    """Learnable 2x upsampling: each input pixel expands to a 2x2 block."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / c_in), size=(c_in, c_out, 2, 2))
        self.params["b"] = np.zeros(c_out)

    def forward(self, x):
        n, c, h, w = x.shape
        t = np.tensordot(x, self.params["W"], axes=([1], [0]))  # (N, H, W, O, 2, 2)
        y = t.transpose(0, 3, 1, 4, 2, 5).reshape(n, self.c_out, 2 * h, 2 * w)
        return y + self.params["b"][None, :, None, None], x

    def backward(self, dy, cache):
        x = cache
        n, c, h, w = x.shape
        dt = dy.reshape(n, self.c_out, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)  # (N, H, W, O, 2, 2)
        grads = {
            "W": np.tensordot(x, dt, axes=([0, 2, 3], [0, 1, 2])),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        dx = np.tensordot(dt, self.params["W"], axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        return dx, grads


class ReLU(Layer):
    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, cache):
        return dy * cache, {}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.params["W"] = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        self.params["b"] = np.zeros(n_out)

    def forward(self, x):
        return x @ self.params["W"].T + self.params["b"], x

    def backward(self, dy, cache):
        x = cache
        grads = {"W": dy.T @ x, "b": dy.sum(axis=0)}
        return dy @ self.params["W"], grads


class GlobalAvgPool(Layer):
    def forward(self, x):
        return x.mean(axis=(2, 3)), x.shape

    def backward(self, dy, cache):
        n, c, h, w = cache
        return np.broadcast_to(dy[:, :, None, None], (n, c, h, w)) / (h * w), {}


class SqueezeExcite(Layer):
    """Channel gate: GAP -> dense bottleneck -> sigmoid, multiplied back."""

    def __init__(self, channels: int, rng: np.random.Generator, reduction: int = 4):
        super().__init__()
        hidden = max(channels // reduction, 2)
        self.params["W1"] = rng.normal(0.0, np.sqrt(2.0 / channels), size=(hidden, channels))
        self.params["b1"] = np.zeros(hidden)
        self.params["W2"] = rng.normal(0.0, np.sqrt(2.0 / hidden), size=(channels, hidden))
        self.params["b2"] = np.zeros(channels)

    def forward(self, x):
        n, c, h, w = x.shape
        s = x.mean(axis=(2, 3))
        pre = s @ self.params["W1"].T + self.params["b1"]
        hdn = np.maximum(pre, 0.0)
        gate = sigmoid(hdn @ self.params["W2"].T + self.params["b2"])
        y = x * gate[:, :, None, None]
        return y, (x, s, pre, hdn, gate)

    def backward(self, dy, cache):
        x, s, pre, hdn, gate = cache
        n, c, h, w = x.shape
        dgate = (dy * x).sum(axis=(2, 3)) * gate * (1.0 - gate)
        grads = {"W2": dgate.T @ hdn, "b2": dgate.sum(axis=0)}
        dhdn = (dgate @ self.params["W2"]) * (pre > 0)
        grads["W1"] = dhdn.T @ s
        grads["b1"] = dhdn.sum(axis=0)
        ds = dhdn @ self.params["W1"]
        dx = dy * gate[:, :, None, None] + ds[:, :, None, None] / (h * w)
        return dx, grads
