"""
EGA - Mechanisms as closures over a fixed request
A mechanism maps a bid vector to an outcome (winners in slot order, per-slot
payments and per-slot pCTR). Regret and revenue metrics re-run a mechanism
under replaced bids, so everything except the bids is held fixed.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from numerics import ops
from numerics.tensor import Tensor, no_grad

from .allocation import allocation_log_probabilities, greedy_select, validate_bids
from .evaluator import Evaluator
from .generator import Generator
from .payment import PaymentNetwork, PaymentResult

logger = logging.getLogger(__name__)


@dataclass
class MechanismOutcome:
    winners: List[int]
    payments: np.ndarray
    ctr: np.ndarray
    z: Optional[np.ndarray] = field(default=None, repr=False)

    def slots_of(self, ad: int) -> List[int]:
        return [slot for slot, winner in enumerate(self.winners) if winner == ad]

    def utility(self, ad: int, value: float) -> float:
        """Expected utility ctr * (value - payment), zero when the ad is not shown."""
        return float(sum(self.ctr[s] * (value - self.payments[s]) for s in self.slots_of(ad)))

    @property
    def revenue(self) -> float:
        return float(np.dot(self.ctr, self.payments))

    @property
    def expected_clicks(self) -> float:
        return float(np.sum(self.ctr))

    def to_record(self, request_id: int, candidate_ids: Sequence[int], bids) -> "AllocationRecord":
        bids = np.asarray(bids, dtype=np.float64).reshape(-1)
        return AllocationRecord(
            request_id=request_id,
            ad_ids=[int(candidate_ids[w]) for w in self.winners],
            bids=[float(bids[w]) for w in self.winners],
            payments=[float(p) for p in self.payments],
            ctr=[float(q) for q in self.ctr],
        )


@dataclass
class AllocationRecord:
    """Per-request auction result in slot order."""
    request_id: int
    ad_ids: List[int]
    bids: List[float]
    payments: List[float]
    ctr: List[float]


Mechanism = Callable[[np.ndarray], MechanismOutcome]


# ==============================================================================
# GSP and single-slot references
# ==============================================================================

def gsp_allocate(ctr, bids, k: int) -> Tuple[List[int], np.ndarray]:
    """
    Rank by ctr * bid (stable, ties to the lowest index). Slot i pays the next
    ranked score over its own ctr, capped at its bid; the last ranked winner
    with no runner-up pays 0.
    """
    ctr = np.asarray(ctr, dtype=np.float64).reshape(-1)
    bids = validate_bids(bids)
    scores = ctr * bids
    order = np.argsort(-scores, kind="stable")
    winners = [int(ad) for ad in order[:k]]
    payments = np.zeros(len(winners))
    for rank, ad in enumerate(winners):
        if rank + 1 < len(order) and ctr[ad] > 0:
            price = scores[order[rank + 1]] / ctr[ad]
            payments[rank] = min(price, bids[ad])
    return winners, payments


def first_price_auction(ctr, bids) -> MechanismOutcome:
    """Single slot, highest ctr * bid wins and pays its own bid."""
    ctr = np.asarray(ctr, dtype=np.float64).reshape(-1)
    bids = validate_bids(bids)
    winner = int(np.argmax(ctr * bids))
    return MechanismOutcome([winner], np.array([bids[winner]]), np.array([ctr[winner]]))


def second_price_auction(ctr, bids) -> MechanismOutcome:
    """Single slot, highest ctr * bid wins and pays the runner-up score over its own ctr."""
    ctr = np.asarray(ctr, dtype=np.float64).reshape(-1)
    winners, payments = gsp_allocate(ctr, bids, 1)
    return MechanismOutcome(winners, payments, ctr[winners])


class GSPMechanism:
    """GSP over a request; slate pCTRs come from `slate_ctr` when given, else from the ranking pCTR."""

    def __init__(self, ctr, k: int, slate_ctr: Optional[Callable[[Sequence[int]], np.ndarray]] = None):
        self.ctr = np.asarray(ctr, dtype=np.float64).reshape(-1)
        self.k = k
        self.slate_ctr = slate_ctr

    def __call__(self, bids) -> MechanismOutcome:
        winners, payments = gsp_allocate(self.ctr, bids, self.k)
        ctr = self.slate_ctr(winners) if self.slate_ctr else self.ctr[winners]
        return MechanismOutcome(winners, payments, np.asarray(ctr, dtype=np.float64))


# ==============================================================================
# Generator + evaluator + payment network
# ==============================================================================

class EGAMechanism:
    """
    The learned auction for one request. Slot scores A do not depend on bids,
    so they are computed once; a replaced bid vector only changes the bid
    bias, the greedy slate, the slate pCTRs and the payments.
    """

    def __init__(self, h_ad: Tensor, ctr_hat, e_u: Tensor, bids, generator: Generator,
                 evaluator: Evaluator, payment: PaymentNetwork):
        self.h_ad = h_ad.detach()
        self.ctr_hat = np.asarray(ctr_hat.data if isinstance(ctr_hat, Tensor) else ctr_hat,
                                  dtype=np.float64).reshape(-1)
        self.e_u = e_u.detach()
        self.evaluator = evaluator
        self.payment = payment
        with no_grad():
            allocation = generator.scores(self.h_ad, self.ctr_hat, bids)
        self.scores = allocation.scores
        self.w_z = allocation.w_z
        self._slate_ctr: Dict[Tuple[int, ...], np.ndarray] = {}

    def allocate(self, bids, exclude: Sequence[int] = ()) -> Tuple[List[int], np.ndarray]:
        log_z = allocation_log_probabilities(self.scores, self.ctr_hat, bids, self.w_z)
        return greedy_select(log_z, exclude), np.exp(log_z)

    def slate_ctr(self, winners: Sequence[int]) -> np.ndarray:
        """Evaluator pCTRs for a slate, cached per slate."""
        key = tuple(int(w) for w in winners)
        if key not in self._slate_ctr:
            with no_grad():
                q = self.evaluator.score_slate(self.h_ad, key, self.e_u)
            self._slate_ctr[key] = q.data[:, 0].copy()
        return self._slate_ctr[key]

    def payment_result(self, winners: Sequence[int], bids, training: bool = False) -> PaymentResult:
        """Differentiable in the payment parameters when gradients are recorded."""
        bids = validate_bids(bids)
        winners = list(winners)
        q = Tensor(self.slate_ctr(winners).reshape(-1, 1))
        return self.payment(ops.take_rows(self.h_ad, winners), q, bids[winners], training)

    def __call__(self, bids) -> MechanismOutcome:
        winners, z = self.allocate(bids)
        with no_grad():
            result = self.payment_result(winners, bids)
        return MechanismOutcome(winners, result.payments, self.slate_ctr(winners), z=z)
