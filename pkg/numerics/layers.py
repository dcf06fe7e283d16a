"""
EGA - Parameterized building blocks
Linear maps, the Dice activation, layer normalization and Dice MLPs, all
registered in a ParamStore under a path prefix.
"""
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from django.conf import settings

from . import ops
from .exceptions import ShapeMismatchError
from .params import ParamStore, init_uniform
from .tensor import Tensor, as_tensor


class Linear:
    """y = x W + b with W: d_in x d_out."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.store = store
        self.prefix = prefix
        self.d_in = d_in
        self.d_out = d_out
        self.weight_name = f"{prefix}/weight"
        self.bias_name = f"{prefix}/bias" if bias else None
        store.add(self.weight_name, init_uniform(rng, d_in, (d_in, d_out)))
        if bias:
            store.add(self.bias_name, np.zeros((1, d_out)))

    @property
    def weight(self) -> Tensor:
        return self.store[self.weight_name]

    @property
    def bias(self):
        return self.store[self.bias_name] if self.bias_name else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        if self.bias_name:
            out = out + self.bias
        return out

    def zero_(self) -> None:
        """Zero weights and bias (used for 0.5-at-init output heads)."""
        self.store.load(self.weight_name, np.zeros((self.d_in, self.d_out)))
        if self.bias_name:
            self.store.load(self.bias_name, np.zeros((1, self.d_out)))


@dataclass
class DiceState:
    """Per-channel running statistics and learnable alpha of one Dice activation."""
    store: ParamStore
    prefix: str
    channels: int
    epsilon: float
    momentum: float

    @property
    def alpha(self) -> Tensor:
        return self.store[f"{self.prefix}/alpha"]

    @property
    def running_mean(self) -> np.ndarray:
        return self.store.buffer(f"{self.prefix}/running_mean")

    @property
    def running_var(self) -> np.ndarray:
        return self.store.buffer(f"{self.prefix}/running_var")


def dice_state(store: ParamStore, prefix: str, channels: int, epsilon: float = None,
               momentum: float = None) -> DiceState:
    epsilon = settings.EGA_DICE_EPSILON if epsilon is None else epsilon
    momentum = settings.EGA_DICE_MOMENTUM if momentum is None else momentum
    if epsilon <= 0:
        raise ValueError(f"dice epsilon must be positive, got {epsilon}")
    store.add(f"{prefix}/alpha", np.zeros((1, channels)))
    store.add_buffer(f"{prefix}/running_mean", np.zeros(channels))
    store.add_buffer(f"{prefix}/running_var", np.ones(channels))
    return DiceState(store, prefix, channels, epsilon, momentum)


def dice(x: Tensor, state: DiceState, training: bool) -> Tensor:
    """
    out = p(s) * s + (1 - p(s)) * alpha * s, p(s) = sigmoid((s - mean) / sqrt(var + eps)).
    Training mode normalizes with batch statistics and folds them into the
    running statistics; inference mode uses the running statistics.
    """
    x = as_tensor(x)
    if x.cols != state.channels:
        raise ShapeMismatchError(f"dice: input {x.shape} vs {state.channels} channels")
    if training and x.rows > 0:
        batch_mean = ops.mean(x, axis=0)
        centered = x - batch_mean
        batch_var = ops.mean(centered * centered, axis=0)
        normalized = centered / ops.sqrt(batch_var + state.epsilon)
        m = state.momentum
        state.store.set_buffer(f"{state.prefix}/running_mean",
                               m * state.running_mean + (1.0 - m) * batch_mean.data)
        state.store.set_buffer(f"{state.prefix}/running_var",
                               m * state.running_var + (1.0 - m) * batch_var.data)
    else:
        scale = 1.0 / np.sqrt(state.running_var + state.epsilon)
        normalized = (x - state.running_mean) * scale
    p = ops.sigmoid(normalized)
    return p * x + (1.0 - p) * state.alpha * x


class LayerNorm:
    def __init__(self, store: ParamStore, prefix: str, d: int, eps: float = 1e-5):
        self.store = store
        self.prefix = prefix
        self.eps = eps
        store.add(f"{prefix}/gamma", np.ones((1, d)))
        store.add(f"{prefix}/beta", np.zeros((1, d)))

    def __call__(self, x: Tensor) -> Tensor:
        mu = ops.mean(x, axis=1)
        centered = x - mu
        var = ops.mean(centered * centered, axis=1)
        normalized = centered / ops.sqrt(var + self.eps)
        return normalized * self.store[f"{self.prefix}/gamma"] + self.store[f"{self.prefix}/beta"]


class DiceMLP:
    """Linear layers with Dice between them; returns logits of the last layer."""

    def __init__(self, store: ParamStore, prefix: str, sizes: Sequence[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError(f"MLP needs at least input and output sizes, got {sizes}")
        self.layers = [
            Linear(store, f"{prefix}/linear{i}", sizes[i], sizes[i + 1], rng)
            for i in range(len(sizes) - 1)
        ]
        self.activations = [
            dice_state(store, f"{prefix}/dice{i}", sizes[i + 1])
            for i in range(len(sizes) - 2)
        ]

    @property
    def final(self) -> Linear:
        return self.layers[-1]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for layer, act in zip(self.layers[:-1], self.activations):
            x = dice(layer(x), act, training)
        return self.final(x)
