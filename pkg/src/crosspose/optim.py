"""Optimizers over flat name->array parameter dicts. Updates are applied
in place so the model's layer objects keep owning their arrays."""

from __future__ import annotations

import numpy as np


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, g in grads.items():
            params[key] -= self.lr * g


class RMSProp:
    """Running-mean-square scaling: s <- decay*s + (1-decay)*g^2,
    theta <- theta - lr * g / (sqrt(s) + eps)."""

    def __init__(self, lr: float, decay: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self.state: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for key, g in grads.items():
            s = self.state.get(key)
            if s is None:
                s = np.zeros_like(g)
                self.state[key] = s
            s *= self.decay
            s += (1.0 - self.decay) * g * g
            params[key] -= self.lr * g / (np.sqrt(s) + self.eps)
