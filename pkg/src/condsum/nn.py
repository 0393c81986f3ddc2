"""Small neural building blocks on top of the autodiff tape.

All trainable sub-networks in the package are two-layer perceptrons with a
tanh hidden layer. Weights start uniform in +-sqrt(6/(fan_in+fan_out)),
biases at zero.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def glorot_uniform(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int):
        self.W = Tensor(glorot_uniform(rng, n_in, n_out), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.W + self.b

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}


class MLP2:
    """Linear -> tanh -> Linear."""

    def __init__(self, rng: np.random.Generator, n_in: int, hidden: int, n_out: int):
        self.fc1 = Linear(rng, n_in, hidden)
        self.fc2 = Linear(rng, hidden, n_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.tanh(self.fc1(x)))

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = self.fc1.parameters(f"{prefix}.fc1")
        out.update(self.fc2.parameters(f"{prefix}.fc2"))
        return out


class LayerNorm:
    """Normalization over the last axis with learned gain and bias."""

    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.bias = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / ad.sqrt(var + self.eps)
        return normed * self.gain + self.bias

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.gain": self.gain, f"{prefix}.bias": self.bias}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def check_finite(params: dict[str, Tensor]) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p.data)):
            raise ValueError(f"non-finite values in parameter {name}")
