"""
EGA - Full model
Feature service, RecFormer and the AucFormer networks share one ParamStore.
Each training phase unfreezes its own parameter prefixes only.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from aucformer.evaluator import Evaluator
from aucformer.generator import Generator
from aucformer.mechanisms import EGAMechanism, GSPMechanism
from aucformer.payment import PaymentNetwork
from feature_store.records import AdFeatureRecord, FeatureSchema
from feature_store.service import HybridFeatureService
from numerics.params import ParamStore
from numerics.tensor import Tensor, no_grad
from recformer.config import RecFormerConfig
from recformer.model import RecFormer

from .exceptions import UnknownPhaseError

logger = logging.getLogger(__name__)

PHASES = ("pretrain", "reward", "rlaf", "payment")

PHASE_TRAINABLE: Dict[str, Tuple[str, ...]] = {
    "pretrain": ("feature_store/", "recformer/"),
    "reward": ("recformer/", "aucformer/evaluator/"),
    "rlaf": ("aucformer/generator/",),
    "payment": ("aucformer/payment/",),
}


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32
    k: int = 5
    n_clusters: int = 16
    n_heads: int = 4
    m: int = 2
    m_c: int = 1
    m_e: int = 2
    fusion_mode: str = "both"

    @property
    def recformer(self) -> RecFormerConfig:
        return RecFormerConfig(m=self.m, m_c=self.m_c, d=self.d, n_clusters=self.n_clusters,
                               n_heads=self.n_heads, fusion_mode=self.fusion_mode)


@dataclass
class EncodedRequest:
    ad_ids: Tuple[int, ...]
    h_ad: Tensor
    ctr_hat: Tensor      # N x 1 set-aware pCTR
    e_u: Tensor
    bids: np.ndarray
    values: np.ndarray

    @property
    def ctr(self) -> np.ndarray:
        return self.ctr_hat.data[:, 0].copy()


class EGAModel:
    def __init__(self, config: ModelConfig, schema: FeatureSchema, ads: Iterable[AdFeatureRecord],
                 seed: int = 0, namespace: str = "default"):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        self.features = HybridFeatureService(self.store, schema, c.d, rng, ads=ads, namespace=namespace)
        self.recformer = RecFormer(self.store, c.recformer, rng)
        self.generator = Generator(self.store, c.d, c.k, c.n_heads, c.n_clusters, c.m_e, rng)
        self.evaluator = Evaluator(self.store, c.d, c.k, c.n_heads, c.n_clusters, c.m_e, rng)
        self.payment = PaymentNetwork(self.store, c.d, c.k, rng)
        logger.info(f"EGA model: {len(self.store)} tensors, "
                    f"{sum(self.store[n].data.size for n in self.store.names())} parameters")

    def set_phase(self, phase: str) -> None:
        try:
            prefixes = PHASE_TRAINABLE[phase]
        except KeyError:
            raise UnknownPhaseError(f"unknown phase '{phase}', expected one of {PHASES}") from None
        self.store.freeze_all_except(*prefixes)

    def encode(self, ad_ids: Sequence[int], user_id: int, training: bool = False) -> EncodedRequest:
        """Local ad lookup, one remote user fetch, RecFormer and the pCTR head."""
        ads = self.features.resolve_ads(ad_ids)
        e_ad = self.features.embed_ads(ads)
        e_u, e_bhvr = self.features.fetch_user(user_id)
        h_ad, h_usr = self.recformer.encode(e_ad, e_bhvr, training=training)
        ctr_hat = self.recformer.ctr_head(h_ad, e_u, training=training, h_usr=h_usr)
        return EncodedRequest(
            ad_ids=tuple(int(i) for i in ad_ids),
            h_ad=h_ad,
            ctr_hat=ctr_hat,
            e_u=e_u,
            bids=np.array([ad.bid for ad in ads], dtype=np.float64),
            values=np.array([ad.private_value for ad in ads], dtype=np.float64),
        )

    def encode_frozen(self, ad_ids: Sequence[int], user_id: int) -> EncodedRequest:
        with no_grad():
            return self.encode(ad_ids, user_id)

    def mechanism(self, encoded: EncodedRequest) -> EGAMechanism:
        return EGAMechanism(encoded.h_ad, encoded.ctr_hat, encoded.e_u, encoded.bids,
                            self.generator, self.evaluator, self.payment)

    def gsp_mechanism(self, encoded: EncodedRequest, slate_ctr=None) -> GSPMechanism:
        return GSPMechanism(encoded.ctr, self.config.k, slate_ctr=slate_ctr)
