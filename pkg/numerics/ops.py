"""
EGA - Differentiable operation set
Only matmul feeds the FLOP counter (2*m*k*n for an m x k by k x n product);
elementwise work, softmax exponentials and normalizations are not counted.
"""
from typing import Optional, Sequence

import numpy as np
from django.conf import settings
from scipy.special import expit, log_softmax, softmax

from .exceptions import ShapeMismatchError
from .flops import FLOPS
from .tensor import Tensor, as_tensor, make_node


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    for axis in (0, 1):
        if a.shape[axis] != b.shape[axis] and 1 not in (a.shape[axis], b.shape[axis]):
            raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


# ==============================================================================
# Products and elementwise arithmetic
# ==============================================================================

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeMismatchError(f"matmul: {a.shape} x {b.shape}")
    FLOPS.add(2 * a.rows * a.cols * b.cols)
    a_data, b_data = a.data, b.data

    def backward(g):
        return g @ b_data.T, a_data.T @ g

    return make_node(a_data @ b_data, (a, b), backward, "matmul")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    a_data, b_data = a.data, b.data
    return make_node(a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    a_data, b_data = a.data, b.data
    out = a_data / b_data

    def backward(g):
        return g / b_data, -g * out / b_data

    return make_node(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


# ==============================================================================
# Pointwise functions
# ==============================================================================

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    a_data = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a_data)
    return make_node(out, (a,), lambda g: (g / a_data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softmax_rows(a) -> Tensor:
    """Row-wise softmax; scipy subtracts the row max before exponentiating."""
    a = as_tensor(a)
    if a.cols == 0:
        return make_node(a.data.copy(), (a,), lambda g: (g,), "softmax_rows")
    out = softmax(a.data, axis=1)

    def backward(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return make_node(out, (a,), backward, "softmax_rows")


def softmax_cols(a) -> Tensor:
    """Column-wise softmax (each column sums to 1)."""
    return transpose(softmax_rows(transpose(a)))


def log_softmax_rows(a) -> Tensor:
    """Row-wise log softmax; stays finite where softmax underflows to 0."""
    a = as_tensor(a)
    if a.cols == 0:
        return make_node(a.data.copy(), (a,), lambda g: (g,), "log_softmax_rows")
    out = log_softmax(a.data, axis=1)
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return make_node(out, (a,), backward, "log_softmax_rows")


def log_softmax_cols(a) -> Tensor:
    return transpose(log_softmax_rows(transpose(a)))


# ==============================================================================
# Structural operations
# ==============================================================================

def transpose(a) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    other = 1 - axis
    if len({t.shape[other] for t in tensors}) > 1:
        shapes = [t.shape for t in tensors]
        raise ShapeMismatchError(f"concat along axis {axis}: incompatible shapes {shapes}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        if axis == 1:
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))
        return tuple(g[bounds[i]:bounds[i + 1], :] for i in range(len(tensors)))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_node(out, tensors, backward, "concat")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return make_node(a.data[:, start:stop].copy(), (a,), backward, "slice_cols")


def take_rows(a, indices) -> Tensor:
    """Gather rows; repeated indices accumulate their gradients."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= a.rows):
        raise ShapeMismatchError(f"take_rows: index out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return make_node(a.data[idx].reshape(len(idx), a.cols), (a,), backward, "take_rows")


def total(a, axis: Optional[int] = None) -> Tensor:
    """Sum over all entries (1x1), over rows (axis=0, 1 x cols) or over columns (axis=1, rows x 1)."""
    a = as_tensor(a)
    shape = a.shape
    if axis is None:
        out = a.data.sum().reshape(1, 1)
    else:
        out = a.data.sum(axis=axis, keepdims=True)
    return make_node(out, (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return total(a, axis) / float(max(count, 1))


# ==============================================================================
# Losses
# ==============================================================================

def bce(p, labels, clamp: Optional[float] = None) -> Tensor:
    """
    Elementwise binary cross-entropy of probabilities `p` against 0/1 labels.
    Probabilities are clamped to [clamp, 1 - clamp]; outside that band the
    gradient is zero.
    """
    p = as_tensor(p)
    y = as_tensor(labels).data
    if y.shape != p.shape:
        raise ShapeMismatchError(f"bce: predictions {p.shape} vs labels {y.shape}")
    eps = settings.EGA_BCE_CLAMP if clamp is None else clamp
    pc = np.clip(p.data, eps, 1.0 - eps)
    out = -(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    inside = (p.data > eps) & (p.data < 1.0 - eps)

    def backward(g):
        return (g * np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0),)

    return make_node(out, (p,), backward, "bce")
