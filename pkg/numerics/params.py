"""
EGA - Named parameter store
Parameters are addressed by slash paths ("recformer/gcf_ad/0/qkv/weight").
Buffers (Dice running statistics) live beside them but never get gradients.
"""
import logging
import threading
from typing import Dict, Iterable, List, Optional

import numpy as np

from .exceptions import (
    DuplicateParameterError,
    FrozenParameterError,
    ShapeMismatchError,
    UnknownParameterError,
)
from .tensor import Tensor

logger = logging.getLogger(__name__)


def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Zero-mean uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class ParamStore:
    """Owns every trainable matrix and buffer of a model."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._buffers: Dict[str, np.ndarray] = {}
        self._frozen = set()
        self._lock = threading.Lock()

    # ------------------------------------------------------------------
    # Registration
    # ------------------------------------------------------------------
    def add(self, name: str, value) -> Tensor:
        if name in self._params or name in self._buffers:
            raise DuplicateParameterError(f"parameter '{name}' already registered")
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_buffer(self, name: str, value) -> np.ndarray:
        if name in self._params or name in self._buffers:
            raise DuplicateParameterError(f"buffer '{name}' already registered")
        self._buffers[name] = np.array(value, dtype=np.float64).reshape(1, -1)
        return self._buffers[name]

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise UnknownParameterError(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def buffer(self, name: str) -> np.ndarray:
        try:
            return self._buffers[name]
        except KeyError:
            raise UnknownParameterError(name) from None

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        current = self.buffer(name)
        with self._lock:
            current[...] = value

    def names(self, prefix: Optional[str] = None) -> List[str]:
        return [n for n in self._params if prefix is None or n.startswith(prefix)]

    def buffer_names(self) -> List[str]:
        return list(self._buffers)

    # ------------------------------------------------------------------
    # Freezing
    # ------------------------------------------------------------------
    def freeze(self, *prefixes: str) -> None:
        for name in self._match(prefixes):
            self._frozen.add(name)
            self._params[name].requires_grad = False

    def unfreeze(self, *prefixes: str) -> None:
        for name in self._match(prefixes):
            self._frozen.discard(name)
            self._params[name].requires_grad = True

    def freeze_all_except(self, *prefixes: str) -> None:
        self.freeze("")
        self.unfreeze(*prefixes)
        logger.debug(f"Trainable prefixes: {prefixes}, {len(self.trainable_names())} tensors")

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def trainable_names(self) -> List[str]:
        return [n for n in self._params if n not in self._frozen]

    def _match(self, prefixes: Iterable[str]) -> List[str]:
        return [n for n in self._params if any(n.startswith(p) for p in prefixes)]

    # ------------------------------------------------------------------
    # Gradients and updates
    # ------------------------------------------------------------------
    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        """Gradient slot per parameter; untouched or frozen slots are exact zeros."""
        return {
            name: (t.grad.copy() if t.grad is not None else np.zeros(t.shape))
            for name, t in self._params.items()
        }

    def assign(self, name: str, value) -> None:
        tensor = self[name]
        if name in self._frozen:
            raise FrozenParameterError(f"parameter '{name}' is frozen")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != tensor.shape:
            raise ShapeMismatchError(f"assign '{name}': {value.shape} vs {tensor.shape}")
        with self._lock:
            tensor.data[...] = value

    def load(self, name: str, value) -> None:
        """Overwrite a parameter or buffer regardless of freezing (checkpoint restore)."""
        value = np.asarray(value, dtype=np.float64)
        target = self._params[name].data if name in self._params else self.buffer(name)
        if value.shape != target.shape:
            raise ShapeMismatchError(f"load '{name}': {value.shape} vs {target.shape}")
        with self._lock:
            target[...] = value

    def state(self) -> Dict[str, tuple]:
        """name -> (array copy, is_trainable_parameter)."""
        data = {name: (t.data.copy(), True) for name, t in self._params.items()}
        data.update({name: (b.copy(), False) for name, b in self._buffers.items()})
        return data


def gradient_of(loss: Tensor, params: ParamStore) -> Dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss, written to the store's gradient slots."""
    params.zero_grad()
    loss.backward()
    return params.grads()
