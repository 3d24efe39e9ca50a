"""Numerical building blocks shared by the hand-differentiated models."""
from __future__ import annotations

import numpy as np
from scipy.special import expit

Params = dict[str, np.ndarray]


def sigmoid(x):
    return expit(x)


def softplus(x):
    return np.logaddexp(0.0, x)


def bce_with_logits(logits, targets) -> float:
    """Mean binary cross-entropy computed from logits without overflow."""
    logits = np.asarray(logits, dtype=np.float64)
    return float(np.mean(softplus(logits) - targets * logits))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def sinusoidal_embedding(t, width: int) -> np.ndarray:
    """Transformer-style timestep embedding, one row per entry of ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = width // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.zeros((len(t), width))
    emb[:, 0:2 * half:2] = np.sin(args)
    emb[:, 1:2 * half:2] = np.cos(args)
    return emb


class Adam:
    def __init__(self, params: Params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        """Update ``params`` in place."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def all_finite(params: Params) -> bool:
    return all(np.isfinite(v).all() for v in params.values())


def central_difference(loss_fn, params: Params, name: str, index: tuple, step: float = 1e-5) -> float:
    """Central finite-difference derivative of ``loss_fn(params)`` w.r.t. one
    coordinate. Restores the coordinate afterwards."""
    arr = params[name]
    orig = arr[index]
    arr[index] = orig + step
    up = loss_fn(params)
    arr[index] = orig - step
    down = loss_fn(params)
    arr[index] = orig
    return (up - down) / (2.0 * step)
