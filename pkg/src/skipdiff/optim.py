"""Stochastic gradient descent with per-parameter adaptive scaling."""

from __future__ import annotations

import numpy as np


class AdaptiveSGD:
    """First/second-moment scaled descent (Adam-style).

    ``step`` returns a fresh parameter snapshot; the optimizer owns its
    moment buffers.
    """

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.count
        bias2 = 1.0 - b2 ** self.count
        out = {}
        for name, value in params.items():
            g = grads[name]
            m = self._m.get(name)
            v = self._v.get(name)
            m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
            v = (1 - b2) * (g * g) if v is None else b2 * v + (1 - b2) * (g * g)
            self._m[name] = m
            self._v[name] = v
            out[name] = value - self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
        return out


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    """Plain stateless descent step; used for one-shot probe updates."""
    return {name: value - lr * grads[name] for name, value in params.items()}
