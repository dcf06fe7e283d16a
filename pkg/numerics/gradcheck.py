"""
EGA - Central finite-difference gradient check
"""
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from .params import ParamStore, gradient_of
from .tensor import Tensor, no_grad


def finite_difference_errors(loss_fn: Callable[[], Tensor], store: ParamStore,
                             names: Optional[Iterable[str]] = None, step: float = 1e-4,
                             rng: Optional[np.random.Generator] = None,
                             entries_per_tensor: Optional[int] = None) -> Dict[str, float]:
    """
    Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-7) per
    parameter, probing every entry or a random subset of `entries_per_tensor`.
    `loss_fn` must rebuild the loss from the current parameter values.
    """
    names = list(store.trainable_names() if names is None else names)
    analytic = gradient_of(loss_fn(), store)
    rng = rng or np.random.default_rng(0)
    errors = {}
    for name in names:
        data = store[name].data
        flat = np.arange(data.size)
        if entries_per_tensor is not None and data.size > entries_per_tensor:
            flat = rng.choice(data.size, size=entries_per_tensor, replace=False)
        a, n = [], []
        for index in flat:
            pos = np.unravel_index(index, data.shape)
            original = data[pos]
            with no_grad():
                data[pos] = original + step
                plus = loss_fn().item()
                data[pos] = original - step
                minus = loss_fn().item()
            data[pos] = original
            n.append((plus - minus) / (2.0 * step))
            a.append(analytic[name][pos])
        a, n = np.array(a), np.array(n)
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        errors[name] = float(np.linalg.norm(a - n) / max(scale, 1e-7))
    return errors
