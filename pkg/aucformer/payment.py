"""
EGA - Payment network
p~_i = sigmoid(MLP(concat(h_{y_i}, q_{y_i}, b_{-y_i}))) and p = p~ * b, so a
winner is never charged above its bid.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from numerics import ops
from numerics.exceptions import ShapeMismatchError
from numerics.layers import DiceMLP
from numerics.params import ParamStore
from numerics.tensor import Tensor

from .allocation import validate_bids

logger = logging.getLogger(__name__)

PAYMENT_HIDDEN = (128, 32)


@dataclass
class PaymentResult:
    rate: Tensor       # p~, |Y| x 1
    payment: Tensor    # p, |Y| x 1
    ctr: Tensor        # q, |Y| x 1

    @property
    def payments(self) -> np.ndarray:
        return self.payment.data[:, 0].copy()

    @property
    def rates(self) -> np.ndarray:
        return self.rate.data[:, 0].copy()


def other_bids(bids: Sequence[float], k: int) -> np.ndarray:
    """Row i holds the other winners' bids in slot order, zero-padded to K-1 columns."""
    bids = np.asarray(bids, dtype=np.float64).reshape(-1)
    out = np.zeros((len(bids), max(k - 1, 0)))
    for i in range(len(bids)):
        rest = np.delete(bids, i)
        out[i, :len(rest)] = rest
    return out


class PaymentNetwork:
    def __init__(self, store: ParamStore, d: int, k: int, rng: np.random.Generator,
                 prefix: str = "aucformer/payment"):
        self.store = store
        self.prefix = prefix
        self.d = d
        self.k = k
        self.mlp = DiceMLP(store, f"{prefix}/mlp", [d + k, *PAYMENT_HIDDEN, 1], rng)

    def __call__(self, h_seq: Tensor, ctr: Tensor, bids, training: bool = False) -> PaymentResult:
        bids = validate_bids(bids) if len(bids) else np.zeros(0)
        if not (h_seq.rows == ctr.rows == len(bids)):
            raise ShapeMismatchError(
                f"payment: {h_seq.rows} ads, {ctr.rows} pCTRs and {len(bids)} bids"
            )
        if h_seq.rows > self.k:
            raise ShapeMismatchError(f"payment: slate of length {h_seq.rows} exceeds K={self.k}")
        if h_seq.rows == 0:
            empty = Tensor(np.zeros((0, 1)))
            return PaymentResult(rate=empty, payment=empty, ctr=ctr)
        features = ops.concat([h_seq, ctr, Tensor(other_bids(bids, self.k))], axis=1)
        rate = ops.sigmoid(self.mlp(features, training))
        return PaymentResult(rate=rate, payment=rate * bids.reshape(-1, 1), ctr=ctr)


def payment_forward(h_seq: Tensor, ctr: Tensor, bids, network: PaymentNetwork,
                    training: bool = False) -> PaymentResult:
    return network(h_seq, ctr, bids, training)
