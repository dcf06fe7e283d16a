"""
EGA - Permutation-aware evaluator
Scores a finished slate: each slot token is concat(h_{y_i}, t_i, e_u)
projected to d, refined by self cluster-attention over the slate and read
out by an MLP with sigmoid output.
"""
import logging
from typing import Sequence

import numpy as np

from numerics import ops
from numerics.flops import FLOPS
from numerics.layers import DiceMLP, Linear
from numerics.params import ParamStore, init_uniform
from numerics.tensor import Tensor
from recformer.attention import ClusterAttentionLayer

from .exceptions import SlotCountError

logger = logging.getLogger(__name__)

EVALUATOR_HIDDEN = (128, 32)


class Evaluator:
    def __init__(self, store: ParamStore, d: int, k: int, n_heads: int, n_clusters: int, m_e: int,
                 rng: np.random.Generator, prefix: str = "aucformer/evaluator"):
        self.store = store
        self.prefix = prefix
        self.d = d
        self.k = k
        self.slot_name = f"{prefix}/slot_embeddings"
        store.add(self.slot_name, init_uniform(rng, d, (k, d)))
        self.token = Linear(store, f"{prefix}/token", 3 * d, d, rng)
        self.layers = [
            ClusterAttentionLayer(store, f"{prefix}/layers/{i}", d, n_heads, min(n_clusters, k), rng)
            for i in range(m_e)
        ]
        self.mlp = DiceMLP(store, f"{prefix}/mlp", [d, *EVALUATOR_HIDDEN, 1], rng)

    def __call__(self, h_seq: Tensor, e_u: Tensor, training: bool = False) -> Tensor:
        """Per-slot pCTR (|Y| x 1) for the ads in slate order."""
        length = h_seq.rows
        if length > self.k:
            raise SlotCountError(f"slate of length {length} exceeds K={self.k}")
        if length == 0:
            return Tensor(np.zeros((0, 1)))
        with FLOPS.section("auf"):
            slots = ops.take_rows(self.store[self.slot_name], np.arange(length))
            user = ops.take_rows(e_u, np.zeros(length, dtype=np.int64))
            tokens = self.token(ops.concat([h_seq, slots, user], axis=1))
            for layer in self.layers:
                tokens = layer(tokens, training=training)
            return ops.sigmoid(self.mlp(tokens, training))

    def score_slate(self, h_ad: Tensor, winners: Sequence[int], e_u: Tensor, training: bool = False) -> Tensor:
        return self(ops.take_rows(h_ad, list(winners)), e_u, training)


def evaluator_forward(h_ad: Tensor, winners: Sequence[int], e_u: Tensor, evaluator: Evaluator,
                      training: bool = False) -> Tensor:
    return evaluator.score_slate(h_ad, winners, e_u, training)
