"""
EGA - Matrix carrier with reverse-mode gradients
Every value is a 2-D float64 array; scalars are 1x1. A node keeps its parents
and a backward closure only when some parent requires a gradient and
recording is enabled.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NumericalError, ShapeMismatchError, UnsupportedOperationError

logger = logging.getLogger(__name__)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Evaluate without recording a graph (frozen-parameter inference)."""
    previous = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = previous


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim > 2:
        raise ShapeMismatchError(f"matrix must be 2-D, got shape {arr.shape}")
    return arr


class Tensor:
    """Dense matrix node in the gradient graph."""

    # numpy ufuncs must not silently operate on graph nodes
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, op: str = "leaf"):
        self.data = _as_matrix(data)
        if not np.isfinite(self.data).all():
            raise NumericalError(f"non-finite value produced by '{op}' (shape {self.data.shape})")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self.op = op
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable] = None

    # ------------------------------------------------------------------
    # Shape helpers
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeMismatchError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedOperationError(
            "Tensor cannot be converted implicitly; use .numpy() outside the graph"
        )

    # ------------------------------------------------------------------
    # Operators
    # ------------------------------------------------------------------
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __pow__(self, other):
        raise UnsupportedOperationError("power is not part of the operation set; use mul or sqrt")

    # ------------------------------------------------------------------
    # Backward pass
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into `.grad` of every leaf requiring a gradient."""
        if self.shape != (1, 1):
            raise ShapeMismatchError(f"backward() needs a scalar (1x1) loss, got {self.shape}")
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads = {id(self): np.ones((1, 1))}
        for node in reversed(order):
            upstream = grads.pop(id(node), None)
            if upstream is None:
                continue
            if not node._parents:
                node.grad = upstream.copy() if node.grad is None else node.grad + upstream
                continue
            for parent, local in zip(node._parents, node._backward(upstream)):
                if local is None or not parent.requires_grad:
                    continue
                local = unbroadcast(local, parent.shape)
                key = id(parent)
                grads[key] = grads[key] + local if key in grads else local


def _topological_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    for axis in (0, 1):
        if shape[axis] == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    if grad.shape != shape:
        raise ShapeMismatchError(f"cannot reduce gradient {grad.shape} to {shape}")
    return grad


def as_tensor(value) -> Tensor:
    """Wrap constants (python numbers, arrays) as non-trainable tensors."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, op="const")


def make_node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out
