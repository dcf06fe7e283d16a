"""
EGA - RecFormer
Global Cluster-Former stacks over the candidate set and the behavior
sequence, mid-fusion cross attention at every m_c-th layer, and the
set-aware pCTR head. Late fusion skips the mid-fusion blocks and joins the
behavior sequence once, at the head.
"""
import logging
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from numerics import ops
from numerics.flops import FLOPS
from numerics.layers import DiceMLP
from numerics.params import ParamStore
from numerics.tensor import Tensor

from .attention import ClusterAttentionLayer
from .config import RecFormerConfig
from .exceptions import InvalidConfigError

logger = logging.getLogger(__name__)

CTR_HIDDEN = (128, 32)

FuseHook = Callable[[int, Tensor, Tensor, bool], Tuple[Tensor, Tensor]]


class RecFormer:
    def __init__(self, store: ParamStore, config: RecFormerConfig, rng: np.random.Generator,
                 prefix: str = "recformer"):
        self.store = store
        self.config = config
        self.prefix = prefix
        c = config

        def layer(path, cross=False):
            return ClusterAttentionLayer(store, f"{prefix}/{path}", c.d, c.n_heads, c.n_clusters, rng, cross=cross)

        self.ad_layers = [layer(f"gcf/ad/{i}") for i in range(c.m)]
        self.usr_layers = [layer(f"gcf/usr/{i}") for i in range(c.m)]
        self.context_layers: Dict[int, ClusterAttentionLayer] = {}
        self.target_layers: Dict[int, ClusterAttentionLayer] = {}
        for index in c.fusion_layers:
            if c.uses_context:
                self.context_layers[index] = layer(f"mif/context/{index}", cross=True)
            if c.uses_target:
                self.target_layers[index] = layer(f"mif/target/{index}", cross=True)
        head_width = 3 * c.d if c.fusion_mode == "late" else 2 * c.d
        self.ctr_mlp = DiceMLP(store, f"{prefix}/ctr_head", [head_width, *CTR_HIDDEN, 1], rng)

    # ==========================================================================
    # Global Cluster-Former
    # ==========================================================================
    def gcf_forward(self, e_ad: Tensor, e_bhvr: Tensor, training: bool = False,
                    fuse: Optional[FuseHook] = None) -> Tuple[Tensor, Tensor]:
        """m stacked self-mode layers over ads and behaviors; `fuse` runs after layer l when given."""
        h_ad, h_usr = e_ad, e_bhvr
        for index in range(1, self.config.m + 1):
            with FLOPS.section("gcf"):
                h_ad = self.ad_layers[index - 1](h_ad, training=training)
            with FLOPS.section("gcf_usr"):
                h_usr = self.usr_layers[index - 1](h_usr, training=training)
            if fuse is not None and index in self.config.fusion_layers:
                h_ad, h_usr = fuse(index, h_ad, h_usr, training)
        return h_ad, h_usr

    # ==========================================================================
    # Mid-fusion Interest-Former
    # ==========================================================================
    def mif_forward(self, index: int, h_ad: Tensor, h_usr: Tensor,
                    training: bool = False) -> Tuple[Tensor, Tensor]:
        """Context attention (behaviors query ads) updates H_usr, then target attention updates H_ad."""
        with FLOPS.section("mif"):
            if index in self.context_layers:
                h_usr = self.context_layers[index](h_usr, h_ad, training=training)
            if index in self.target_layers:
                h_ad = self.target_layers[index](h_ad, h_usr, training=training)
        return h_ad, h_usr

    def encode(self, e_ad: Tensor, e_bhvr: Tensor, training: bool = False) -> Tuple[Tensor, Tensor]:
        """H_ad and H_usr after the stacks; mid fusion runs unless the mode is `none` or `late`."""
        fuse = self.mif_forward if self.config.mid_fusion else None
        return self.gcf_forward(e_ad, e_bhvr, training=training, fuse=fuse)

    def forward(self, e_ad: Tensor, e_bhvr: Tensor, training: bool = False) -> Tensor:
        h_ad, _ = self.encode(e_ad, e_bhvr, training)
        return h_ad

    # ==========================================================================
    # pCTR head
    # ==========================================================================
    def late_interest(self, h_ad: Tensor, h_usr: Tensor) -> Tensor:
        """One target attention of each candidate over the separately encoded sequence (N x d)."""
        if h_usr.rows == 0:
            return Tensor(np.zeros((h_ad.rows, self.config.d)))
        scores = ops.matmul(h_ad, ops.transpose(h_usr)) * (1.0 / np.sqrt(self.config.d))
        return ops.matmul(ops.softmax_rows(scores), h_usr)

    def ctr_head(self, h_ad: Tensor, e_u: Tensor, training: bool = False,
                 h_usr: Optional[Tensor] = None) -> Tensor:
        """
        Set-aware pCTR per candidate (N x 1) from concat(h_i, e_u). Late fusion
        joins the behavior sequence here instead, from concat(h_i, interest_i, e_u).
        """
        with FLOPS.section("ctr_head"):
            user = ops.take_rows(e_u, np.zeros(h_ad.rows, dtype=np.int64))
            parts = [h_ad, user]
            if self.config.fusion_mode == "late":
                if h_usr is None:
                    raise InvalidConfigError("late fusion needs the encoded behavior sequence at the pCTR head")
                parts.insert(1, self.late_interest(h_ad, h_usr))
            logits = self.ctr_mlp(ops.concat(parts, axis=1), training)
        return ops.sigmoid(logits)
