"""
EGA - Adam optimizer over a ParamStore
"""
import logging
from typing import Dict, Iterable, Optional

import numpy as np

from .params import ParamStore

logger = logging.getLogger(__name__)


class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: Dict[str, np.ndarray] = {}
        self._v: Dict[str, np.ndarray] = {}

    def step(self, store: ParamStore, grads: Dict[str, np.ndarray],
             names: Optional[Iterable[str]] = None) -> None:
        """
        Apply one update to `names` (default: every trainable parameter).
        Naming a frozen parameter raises FrozenParameterError from the store.
        """
        self.steps += 1
        t = self.steps
        targets = list(store.trainable_names() if names is None else names)
        for name in targets:
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(g)
                self._v[name] = np.zeros_like(g)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            store.assign(name, store[name].data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        logger.debug(f"Adam step {t}: {len(targets)} tensors")
