"""
EGA - Synthetic auction world
A planted logistic click model: p(click | user, ad, slot) = sigmoid(u . a + bias_slot).
Categorical ad and user features are quantile buckets of random projections
of the hidden latents, so the features carry the signal the encoder must learn.
Everything is a pure function of the world seed.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, softmax

from evaluation.metrics import auc_score
from feature_store.records import AdCorpus, AdFeatureRecord, FeatureSchema, UserFeatureRecord
from training.samples import RequestSample
from training.sampling import sample_negatives

from .exceptions import WorldConfigError

logger = logging.getLogger(__name__)

BAYES_AUC_TARGET = 0.85

SPLITS = {"train": 1, "test": 2, "check": 3, "replay": 4, "recall": 5}


@dataclass(frozen=True)
class WorldConfig:
    seed: int = 0
    n_total: int = 2000
    n: int = 500
    k: int = 5
    l: int = 64
    n_s: int = 32
    n_users: int = 500
    latent_dim: int = 8
    latent_scale: float = 1.3
    ad_features: int = 4
    ad_vocab: int = 17
    user_features: int = 3
    user_vocab: int = 9
    context_features: int = 2
    context_vocab: int = 5
    bid_mean: float = 0.0
    bid_sigma: float = 0.5
    value_scale: float = 1.0
    position_decay: float = 0.3
    noise_temperature: float = 1.0
    popularity_rate: float = 50.0
    check_requests: int = 200

    def __post_init__(self):
        if not 1 <= self.k <= self.n:
            raise WorldConfigError(f"K={self.k} must satisfy 1 <= K <= N={self.n}")
        if self.n > self.n_total:
            raise WorldConfigError(f"N={self.n} exceeds N_total={self.n_total}")
        if self.n_s < 0 or self.n_s > self.n_total - self.k:
            raise WorldConfigError(f"N_s={self.n_s} must lie in [0, N_total - K={self.n_total - self.k}]")
        if self.l < 0:
            raise WorldConfigError(f"L={self.l} must be >= 0")
        if self.n_users < 1:
            raise WorldConfigError(f"n_users={self.n_users} must be >= 1")
        if self.latent_dim < 0 or self.latent_scale < 0:
            raise WorldConfigError("latent_dim and latent_scale must be >= 0")
        for name in ("ad_vocab", "user_vocab", "context_vocab"):
            if getattr(self, name) < 2:
                raise WorldConfigError(f"{name}={getattr(self, name)} must be >= 2 (null id plus one value)")
        if self.ad_features < 1:
            raise WorldConfigError(f"ad_features={self.ad_features} must be >= 1")
        if self.user_features + self.context_features < 1:
            raise WorldConfigError("at least one user or context feature is required")
        if self.bid_sigma < 0:
            raise WorldConfigError(f"bid_sigma={self.bid_sigma} must be >= 0")
        if self.value_scale < 1.0:
            raise WorldConfigError(f"value_scale={self.value_scale} must be >= 1 so that v >= b")
        if self.noise_temperature < 0:
            raise WorldConfigError(f"noise_temperature={self.noise_temperature} must be >= 0")

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(
            ad_vocab=(self.ad_vocab,) * self.ad_features,
            user_vocab=(self.user_vocab,) * self.user_features,
            context_vocab=(self.context_vocab,) * self.context_features,
            behavior_length=self.l,
        )


@dataclass
class ClickOracle:
    user_latents: np.ndarray     # n_users x h
    ad_latents: np.ndarray       # (N_total + 1) x h, row 0 is the null ad
    position_bias: np.ndarray    # K
    temperature: float = 1.0

    def logits(self, user_id: int, ad_ids) -> np.ndarray:
        return self.ad_latents[np.asarray(ad_ids, dtype=np.int64)] @ self.user_latents[user_id]

    def probabilities(self, user_id: int, ad_ids, slots: Optional[Sequence[int]] = None) -> np.ndarray:
        logits = self.logits(user_id, ad_ids)
        if slots is not None:
            logits = logits + self.position_bias[np.asarray(slots, dtype=np.int64)]
        return expit(logits)

    def sample_clicks(self, user_id: int, ad_ids, rng: np.random.Generator,
                      slots: Optional[Sequence[int]] = None) -> np.ndarray:
        p = self.probabilities(user_id, ad_ids, slots)
        return (rng.random(p.size) < p).astype(np.int64)


@dataclass
class World:
    config: WorldConfig
    ads: List[AdFeatureRecord]
    users: List[UserFeatureRecord]
    oracle: ClickOracle
    corpus: AdCorpus = field(repr=False, default=None)
    bayes_auc: Optional[float] = None

    def __post_init__(self):
        if self.corpus is None:
            self.corpus = AdCorpus(self.ads)

    @property
    def schema(self) -> FeatureSchema:
        return self.config.schema

    def request_rng(self, split: str, index: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, SPLITS[split], index])


def _bucketize(latents: np.ndarray, n_features: int, vocab: int, rng: np.random.Generator) -> np.ndarray:
    """Quantile bucket ids in [1, vocab - 1] of `n_features` random projections."""
    rows, dim = latents.shape
    out = np.zeros((rows, n_features), dtype=np.int64)
    quantiles = np.linspace(0.0, 1.0, vocab)[1:-1]
    for j in range(n_features):
        score = latents @ rng.normal(size=dim)
        edges = np.quantile(score, quantiles) if quantiles.size else np.zeros(0)
        out[:, j] = 1 + np.searchsorted(edges, score, side="right")
    return np.minimum(out, vocab - 1)


def generate_world(config: WorldConfig) -> World:
    c = config
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(c.seed).spawn(6)]
    latent_rng, feature_rng, bid_rng, behavior_rng, popularity_rng, context_rng = streams

    user_latents = latent_rng.normal(0.0, c.latent_scale, size=(c.n_users, c.latent_dim))
    ad_latents = np.vstack([
        np.zeros((1, c.latent_dim)),
        latent_rng.normal(0.0, c.latent_scale, size=(c.n_total, c.latent_dim)),
    ])
    oracle = ClickOracle(
        user_latents=user_latents,
        ad_latents=ad_latents,
        position_bias=-c.position_decay * np.arange(c.k, dtype=np.float64),
        temperature=c.noise_temperature,
    )

    ad_features = _bucketize(ad_latents[1:], c.ad_features, c.ad_vocab, feature_rng)
    bids = bid_rng.lognormal(c.bid_mean, c.bid_sigma, size=c.n_total)
    ads = [
        AdFeatureRecord(
            ad_id=i + 1,
            features=tuple(int(f) for f in ad_features[i]),
            bid=float(bids[i]),
            private_value=float(bids[i] * c.value_scale),
        )
        for i in range(c.n_total)
    ]

    ad_ids = np.arange(1, c.n_total + 1)
    user_features = _bucketize(user_latents, c.user_features, c.user_vocab, feature_rng)
    all_logits = user_latents @ ad_latents[1:].T
    users = []
    for u in range(c.n_users):
        behaviors = behavior_rng.choice(ad_ids, size=c.l, p=softmax(all_logits[u])) if c.l else []
        users.append(UserFeatureRecord(
            user_id=u,
            features=tuple(int(f) for f in user_features[u]),
            behaviors=tuple(int(b) for b in behaviors),
            timestamps=tuple(range(1, c.l + 1)),
            context=tuple(int(v) for v in context_rng.integers(1, c.context_vocab, c.context_features)),
        ))

    mean_ctr = expit(all_logits).mean(axis=0)
    counts = 1 + popularity_rng.poisson(c.popularity_rate * mean_ctr)
    corpus = AdCorpus(ads, popularity={int(i): int(n) for i, n in zip(ad_ids, counts)})

    world = World(config=c, ads=ads, users=users, oracle=oracle, corpus=corpus)
    world.bayes_auc = oracle_auc(world)
    if world.bayes_auc is not None and world.bayes_auc < BAYES_AUC_TARGET:
        logger.warning(f"World seed {c.seed}: Bayes AUC {world.bayes_auc:.3f} below {BAYES_AUC_TARGET}; "
                       f"logs carry little signal")
    logger.info(f"World seed {c.seed}: {c.n_total} ads, {c.n_users} users, Bayes AUC {world.bayes_auc}")
    return world


def oracle_auc(world: World) -> Optional[float]:
    """AUC of the true click probability on held-out candidate pools."""
    c = world.config
    scores, labels = [], []
    for index in range(c.check_requests):
        rng = world.request_rng("check", index)
        user_id = int(rng.integers(c.n_users))
        candidates = rng.choice(world.corpus.ad_ids, size=c.n, replace=False)
        p = world.oracle.probabilities(user_id, candidates)
        scores.append(p)
        labels.append((rng.random(p.size) < p).astype(np.int64))
    if not scores:
        return None
    return auc_score(np.concatenate(scores), np.concatenate(labels))


def simulate_request(world: World, user_id: int, rng: np.random.Generator, request_id: int = 0) -> RequestSample:
    """
    Candidate pool, exposure by oracle ranking perturbed with Gumbel noise at
    the oracle temperature, in-request clicks with position bias and
    platform-wide labels without it for N_s popularity-sampled negatives.
    """
    c = world.config
    candidates = rng.choice(world.corpus.ad_ids, size=c.n, replace=False)
    noise = rng.gumbel(size=c.n)
    temperature = world.oracle.temperature
    if np.isinf(temperature):
        scores = noise
    else:
        scores = world.oracle.logits(user_id, candidates) + temperature * noise
    exposed = candidates[np.argsort(-scores, kind="stable")[:c.k]]
    exposed_clicks = world.oracle.sample_clicks(user_id, exposed, rng, slots=np.arange(c.k))
    negatives = sample_negatives(world.corpus.ad_ids, world.corpus.popularity_counts(), c.n_s, rng,
                                 exclude=exposed)
    negative_clicks = world.oracle.sample_clicks(user_id, negatives, rng)
    return RequestSample(
        request_id=request_id,
        user_id=int(user_id),
        candidates=tuple(int(a) for a in candidates),
        exposed=tuple(int(a) for a in exposed),
        exposed_clicks=tuple(int(v) for v in exposed_clicks),
        unexposed=tuple(int(a) for a in negatives),
        unexposed_clicks=tuple(int(v) for v in negative_clicks),
    )


def simulate_requests(world: World, count: int, split: str, n_jobs: int = 1) -> List[RequestSample]:
    """`count` requests of one split; each request draws from its own seeded stream."""
    def one(index):
        rng = world.request_rng(split, index)
        user_id = int(rng.integers(world.config.n_users))
        return simulate_request(world, user_id, rng, request_id=index)

    return list(Parallel(n_jobs=n_jobs, backend="threading")(delayed(one)(i) for i in range(count)))
