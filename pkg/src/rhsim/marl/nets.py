"""Minimal dense-network core: MLP forward/backward, Adam, soft updates."""
from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected ReLU network with a linear output layer.

    Parameters live in `W` (out x in) and `b` lists; backward returns exact
    analytic gradients for every weight and bias."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = list(sizes)
        self.W = []
        self.b = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.W.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.b.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        return self.W + self.b

    def forward(self, x: np.ndarray):
        """x: (batch, in) -> (batch, out); also returns the cache for backward."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {x.shape[1]} != {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W.T + b
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)
        return h, acts

    def backward(self, acts, grad_out: np.ndarray):
        """Gradients of sum(grad_out * output) w.r.t. params and the input.

        Returns (dW list, db list, dx)."""
        g = np.atleast_2d(np.asarray(grad_out, dtype=float))
        dW = [None] * len(self.W)
        db = [None] * len(self.b)
        last = len(self.W) - 1
        for i in range(last, -1, -1):
            h_out = acts[i + 1]
            if i != last:
                g = g * (h_out > 0)      # ReLU gate
            dW[i] = g.T @ acts[i]
            db[i] = g.sum(axis=0)
            g = g @ self.W[i]
        return dW, db, g

    def copy_from(self, other: "Mlp") -> None:
        for a, b in zip(self.params, other.params):
            a[...] = b


class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** self.t)
            v_hat = v / (1 - b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """theta' <- tau*theta + (1 - tau)*theta', elementwise."""
    for tp, sp in zip(target.params, source.params):
        tp *= (1.0 - tau)
        tp += tau * sp
