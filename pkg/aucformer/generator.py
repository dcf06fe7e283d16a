"""
EGA - Non-autoregressive generator
Learnable slot tokens are refined by cross cluster-attention over the
candidate states, scored against every candidate in one pass, and biased
by the candidate's expected bid value.
"""
import logging
from typing import List, Optional

import numpy as np

from numerics import ops
from numerics.exceptions import ShapeMismatchError
from numerics.flops import FLOPS
from numerics.params import ParamStore, init_uniform
from numerics.tensor import Tensor
from recformer.attention import ClusterAttentionLayer

from .allocation import Allocation, allocation_probabilities, validate_bids
from .exceptions import SlotCountError

logger = logging.getLogger(__name__)


class Generator:
    def __init__(self, store: ParamStore, d: int, k: int, n_heads: int, n_clusters: int, m_e: int,
                 rng: np.random.Generator, prefix: str = "aucformer/generator"):
        if k < 1:
            raise SlotCountError(f"K must be >= 1, got {k}")
        self.store = store
        self.prefix = prefix
        self.d = d
        self.k = k
        self.slot_name = f"{prefix}/slot_tokens"
        self.w_z_name = f"{prefix}/w_z"
        store.add(self.slot_name, init_uniform(rng, d, (k, d)))
        store.add(self.w_z_name, np.zeros((1, 1)))
        self.layers = [
            ClusterAttentionLayer(store, f"{prefix}/refine/{i}", d, n_heads, n_clusters, rng, cross=True)
            for i in range(m_e)
        ]

    @property
    def w_z(self) -> Tensor:
        return self.store[self.w_z_name]

    def slot_representations(self, h_ad: Tensor, training: bool = False) -> Tensor:
        """T (K x d): slot tokens after cross attention over H_ad."""
        tokens = self.store[self.slot_name]
        for layer in self.layers:
            tokens = layer(tokens, h_ad, training=training)
        return tokens

    def scores(self, h_ad: Tensor, ctr, bids, training: bool = False) -> Allocation:
        """A = H_ad T^T and the bid-biased column softmax z (N x K)."""
        bids = validate_bids(bids)
        if len(bids) != h_ad.rows:
            raise ShapeMismatchError(f"{len(bids)} bids for {h_ad.rows} candidates")
        if not isinstance(ctr, Tensor):
            ctr = Tensor(np.asarray(ctr, dtype=np.float64).reshape(-1, 1))
        with FLOPS.section("auf"):
            slots = self.slot_representations(h_ad, training)
            a = ops.matmul(h_ad, ops.transpose(slots))
        logits = a + ops.exp(self.w_z) * (ctr * bids.reshape(-1, 1))
        return Allocation(scores=a.numpy(), z=ops.softmax_cols(logits), log_z=ops.log_softmax_cols(logits),
                          w_z=self.w_z.item())

    def __call__(self, h_ad: Tensor, ctr, bids, training: bool = False) -> Allocation:
        allocation = self.scores(h_ad, ctr, bids, training)
        allocation.winners = allocation.select()
        return allocation

    @staticmethod
    def rescore(allocation: Allocation, ctr, bids) -> np.ndarray:
        """z under replaced bids with the slot scores held fixed."""
        return allocation_probabilities(allocation.scores, ctr, bids, allocation.w_z)


def generator_scores(h_ad: Tensor, ctr, bids, generator: Generator, training: bool = False) -> Allocation:
    return generator.scores(h_ad, ctr, bids, training)


def log_selection_probabilities(allocation: Allocation, winners: Optional[List[int]] = None) -> Tensor:
    """log z[y_i, i] per filled slot (|Y| x 1), read from the log softmax."""
    winners = allocation.winners if winners is None else winners
    picked = [ops.slice_cols(ops.take_rows(allocation.log_z, [ad]), slot, slot + 1) for slot, ad in enumerate(winners)]
    return ops.concat(picked, axis=0)
