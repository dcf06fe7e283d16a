"""
EGA - Attention blocks
ClusterAttentionLayer attends from N queries to N_c cluster-level surrogate
keys/values built with an adaptive, content-dependent cluster matrix.
FullAttentionLayer is the quadratic reference over all keys.

Both blocks share the same skeleton:
    Q, K, V  = split(Dice(H W_qkv + b))
    heads    = softmax(Q_h K_h'^T / sqrt(d_h)) V_h'
    H_mid    = LayerNorm(H + Dice(concat(heads) W_o + b_o))
    H_out    = LayerNorm(H_mid + FFN(H_mid)),  FFN: d -> 4d (Dice) -> d
In cross mode Q comes from H and K, V from the key/value source.
"""
import logging
from typing import List, Optional, Tuple

import numpy as np

from numerics import ops
from numerics.exceptions import ShapeMismatchError
from numerics.layers import LayerNorm, Linear, dice, dice_state
from numerics.params import ParamStore
from numerics.tensor import Tensor

from .exceptions import InvalidConfigError

logger = logging.getLogger(__name__)


class AttentionBlock:
    def __init__(self, store: ParamStore, prefix: str, d: int, n_heads: int,
                 rng: np.random.Generator, cross: bool = False):
        if n_heads < 1 or d % n_heads:
            raise InvalidConfigError(f"{prefix}: d={d} must be divisible by N_h={n_heads}")
        self.store = store
        self.prefix = prefix
        self.d = d
        self.n_heads = n_heads
        self.d_head = d // n_heads
        self.cross = cross

        self.qkv = Linear(store, f"{prefix}/qkv", d, 3 * d, rng)
        if cross:
            self.q_dice = dice_state(store, f"{prefix}/qkv_dice_q", d)
            self.kv_dice = dice_state(store, f"{prefix}/qkv_dice_kv", 2 * d)
        else:
            self.qkv_dice = dice_state(store, f"{prefix}/qkv_dice", 3 * d)
        self.out = Linear(store, f"{prefix}/out", d, d, rng)
        self.out_dice = dice_state(store, f"{prefix}/out_dice", d)
        self.ffn_in = Linear(store, f"{prefix}/ffn_in", d, 4 * d, rng)
        self.ffn_dice = dice_state(store, f"{prefix}/ffn_dice", 4 * d)
        self.ffn_out = Linear(store, f"{prefix}/ffn_out", 4 * d, d, rng)
        self.norm_attn = LayerNorm(store, f"{prefix}/norm_attn", d)
        self.norm_ffn = LayerNorm(store, f"{prefix}/norm_ffn", d)

    # ------------------------------------------------------------------
    def project(self, h_in: Tensor, kv: Tensor, training: bool) -> Tuple[Tensor, Tensor, Tensor]:
        d = self.d
        if not self.cross:
            fused = dice(self.qkv(h_in), self.qkv_dice, training)
            return ops.slice_cols(fused, 0, d), ops.slice_cols(fused, d, 2 * d), ops.slice_cols(fused, 2 * d, 3 * d)
        weight, bias = self.qkv.weight, self.qkv.bias
        q = dice(ops.matmul(h_in, ops.slice_cols(weight, 0, d)) + ops.slice_cols(bias, 0, d),
                 self.q_dice, training)
        kv_proj = dice(ops.matmul(kv, ops.slice_cols(weight, d, 3 * d)) + ops.slice_cols(bias, d, 3 * d),
                       self.kv_dice, training)
        return q, ops.slice_cols(kv_proj, 0, d), ops.slice_cols(kv_proj, d, 2 * d)

    def attend(self, q: Tensor, k: Tensor, v: Tensor,
               weights_out: Optional[List[np.ndarray]] = None) -> Tensor:
        scale = 1.0 / np.sqrt(self.d_head)
        heads = []
        for h in range(self.n_heads):
            lo, hi = h * self.d_head, (h + 1) * self.d_head
            scores = ops.matmul(ops.slice_cols(q, lo, hi), ops.transpose(ops.slice_cols(k, lo, hi))) * scale
            weights = ops.softmax_rows(scores)
            if weights_out is not None:
                weights_out.append(weights.numpy())
            heads.append(ops.matmul(weights, ops.slice_cols(v, lo, hi)))
        return ops.concat(heads, axis=1)

    def keys_values(self, q, k, v, h_in, kv_source, training) -> Tuple[Tensor, Tensor]:
        raise NotImplementedError

    def __call__(self, h_in: Tensor, kv: Optional[Tensor] = None, training: bool = False,
                 weights_out: Optional[List[np.ndarray]] = None) -> Tensor:
        if h_in.cols != self.d:
            raise ShapeMismatchError(f"{self.prefix}: input {h_in.shape}, expected width {self.d}")
        if self.cross:
            if kv is None:
                raise ShapeMismatchError(f"{self.prefix}: cross mode needs a key/value source")
            if kv.cols != self.d:
                raise ShapeMismatchError(f"{self.prefix}: key/value source {kv.shape}, expected width {self.d}")
            source = kv
        else:
            source = h_in

        if source.rows == 0:
            # nothing to attend over; only the residual path remains
            attn = Tensor(np.zeros((h_in.rows, self.d)))
        else:
            q, k, v = self.project(h_in, source, training)
            k_eff, v_eff = self.keys_values(q, k, v, h_in, source, training)
            attn = dice(self.out(self.attend(q, k_eff, v_eff, weights_out)), self.out_dice, training)

        h_mid = self.norm_attn(h_in + attn)
        ffn = self.ffn_out(dice(self.ffn_in(h_mid), self.ffn_dice, training))
        return self.norm_ffn(h_mid + ffn)


class ClusterAttentionLayer(AttentionBlock):
    """Cluster attention with adaptive cluster matrix S = softmax(H W_c)."""

    def __init__(self, store: ParamStore, prefix: str, d: int, n_heads: int, n_clusters: int,
                 rng: np.random.Generator, cross: bool = False):
        if n_clusters < 1:
            raise InvalidConfigError(f"{prefix}: N_c must be >= 1, got {n_clusters}")
        super().__init__(store, prefix, d, n_heads, rng, cross=cross)
        self.n_clusters = n_clusters
        self.cluster = Linear(store, f"{prefix}/cluster", d, n_clusters, rng, bias=False)
        self.gate_k = Linear(store, f"{prefix}/gate_k", n_clusters, 1, rng)
        self.gate_v = Linear(store, f"{prefix}/gate_v", n_clusters, 1, rng)
        self.transform_k = Linear(store, f"{prefix}/transform_k", d, d, rng)
        self.transform_v = Linear(store, f"{prefix}/transform_v", d, d, rng)

    def cluster_matrix(self, h: Tensor) -> Tensor:
        """S (rows x N_c): per-token softmax over clusters."""
        return ops.softmax_rows(self.cluster(h))

    def aggregate(self, q: Tensor, k: Tensor, v: Tensor, s: Tensor,
                  s_query: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
        """
        Surrogate tokens A = S_hat^T X with S_hat column-normalized, then the
        gated mixes K' = phi_k * f_k2(A_q) + (1 - phi_k) * f_k2(A_k) and
        V' = phi_v * f_v2(A_q) + (1 - phi_v) * f_v2(A_v), with
        phi_k = sigmoid(f_k1(A_q A_v^T)) and phi_v = sigmoid(f_v1(A_q A_k^T)).
        """
        s_hat = normalize_columns(s)
        s_hat_q = s_hat if s_query is None else normalize_columns(s_query)
        a_q = ops.matmul(ops.transpose(s_hat_q), q)
        a_k = ops.matmul(ops.transpose(s_hat), k)
        a_v = ops.matmul(ops.transpose(s_hat), v)
        phi_k = ops.sigmoid(self.gate_k(ops.matmul(a_q, ops.transpose(a_v))))
        phi_v = ops.sigmoid(self.gate_v(ops.matmul(a_q, ops.transpose(a_k))))
        k_prime = phi_k * self.transform_k(a_q) + (1.0 - phi_k) * self.transform_k(a_k)
        v_prime = phi_v * self.transform_v(a_q) + (1.0 - phi_v) * self.transform_v(a_v)
        return k_prime, v_prime

    def keys_values(self, q, k, v, h_in, kv_source, training):
        s = self.cluster_matrix(kv_source)
        s_query = self.cluster_matrix(h_in) if self.cross else None
        return self.aggregate(q, k, v, s, s_query)


class FullAttentionLayer(AttentionBlock):
    """Standard multi-head attention over all keys (quadratic in sequence length)."""

    def keys_values(self, q, k, v, h_in, kv_source, training):
        return k, v


def normalize_columns(s: Tensor) -> Tensor:
    """Scale each column to sum 1; an all-zero column stays zero."""
    sums = ops.total(s, axis=0)
    empty = (sums.data == 0.0).astype(np.float64)
    return s / (sums + empty)


# ==============================================================================
# Functional entry points
# ==============================================================================

def cluster_matrix(h: Tensor, layer: ClusterAttentionLayer) -> Tensor:
    return layer.cluster_matrix(h)


def cluster_aggregate(q: Tensor, k: Tensor, v: Tensor, s: Tensor, layer: ClusterAttentionLayer,
                      s_query: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    return layer.aggregate(q, k, v, s, s_query)


def cluster_attention_layer(h_in: Tensor, kv: Optional[Tensor], layer: ClusterAttentionLayer,
                            training: bool = False) -> Tensor:
    return layer(h_in, kv if layer.cross else None, training=training)


def full_attention_layer(h_in: Tensor, kv: Optional[Tensor], layer: FullAttentionLayer,
                         training: bool = False) -> Tensor:
    return layer(h_in, kv if layer.cross else None, training=training)
