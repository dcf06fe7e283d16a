"""
EGA - Allocation rule
z[:, k] = softmax over all N candidates of (A[:, k] + exp(w_z) * ctr * bid),
and slots are filled left to right by masked argmax.
"""
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

import numpy as np
from scipy.special import log_softmax, softmax

from numerics.tensor import Tensor

from .exceptions import InvalidBidError, SlotCountError

logger = logging.getLogger(__name__)


def validate_bids(bids) -> np.ndarray:
    """Flatten bids to a float vector, rejecting any nonpositive entry."""
    arr = np.asarray(bids, dtype=np.float64).reshape(-1)
    bad = np.flatnonzero(~(arr > 0))
    if bad.size:
        raise InvalidBidError(f"bids must be positive, got {arr[bad[0]]} at candidate {bad[0]}")
    return arr


@dataclass
class Allocation:
    scores: np.ndarray          # A, N x K
    z: Tensor                   # N x K, column-stochastic
    log_z: Tensor               # log z, finite where z underflows
    w_z: float
    winners: List[int] = field(default_factory=list)

    @property
    def probabilities(self) -> np.ndarray:
        return self.z.data

    @property
    def log_probabilities(self) -> np.ndarray:
        return self.log_z.data

    def select(self, exclude: Iterable[int] = ()) -> List[int]:
        return greedy_select(self.log_z.data, exclude)


def allocation_logits(scores: np.ndarray, ctr, bids, w_z: float) -> np.ndarray:
    ctr = np.asarray(ctr, dtype=np.float64).reshape(-1, 1)
    return scores + np.exp(w_z) * ctr * validate_bids(bids).reshape(-1, 1)


def allocation_probabilities(scores: np.ndarray, ctr, bids, w_z: float) -> np.ndarray:
    """Gradient-free z for a fixed score matrix; used for counterfactual bids."""
    return softmax(allocation_logits(scores, ctr, bids, w_z), axis=0)


def allocation_log_probabilities(scores: np.ndarray, ctr, bids, w_z: float) -> np.ndarray:
    return log_softmax(allocation_logits(scores, ctr, bids, w_z), axis=0)


def greedy_select(z: np.ndarray, exclude: Optional[Iterable[int]] = ()) -> List[int]:
    """
    y_k = argmax over unassigned, non-excluded candidates of z[:, k], ties to
    the lowest index. With candidates excluded, fewer than K slots may be filled.
    Only the order within a column matters, so log z selects the same slate
    and still separates candidates whose z underflows to 0.
    """
    z = np.asarray(z, dtype=np.float64)
    n, k = z.shape
    if k > n:
        raise SlotCountError(f"cannot fill K={k} slots from N={n} candidates")
    taken = np.zeros(n, dtype=bool)
    for ad in exclude or ():
        if 0 <= ad < n:
            taken[ad] = True
    winners: List[int] = []
    for slot in range(min(k, int((~taken).sum()))):
        column = np.where(taken, -np.inf, z[:, slot])
        best = int(np.argmax(column))
        winners.append(best)
        taken[best] = True
    return winners
