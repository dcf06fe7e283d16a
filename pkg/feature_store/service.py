"""
EGA - Hybrid Feature Service
Ad features are served from a local in-process store (categorical only);
user features, request context and the resolved behavior sequence are
consolidated into one payload in the remote store and fetched once per request.
"""
import logging
import threading
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from numerics import ops
from numerics.layers import Linear
from numerics.params import ParamStore, init_uniform
from numerics.tensor import Tensor

from . import cache_utils
from .exceptions import UnknownFeatureError, UnknownUserError
from .records import NULL_ID, AccessCounters, AdFeatureRecord, FeatureSchema, UserFeatureRecord

logger = logging.getLogger(__name__)

ID_BYTES = 8
VALUE_BYTES = 8


class EmbeddingTable:
    """Lookup table whose null id always maps to the zero vector."""

    def __init__(self, store: ParamStore, name: str, vocab: int, dim: int, rng: np.random.Generator):
        self.store = store
        self.name = name
        self.vocab = vocab
        self.dim = dim
        rows = init_uniform(rng, dim, (vocab, dim))
        rows[NULL_ID] = 0.0
        store.add(name, rows)

    @property
    def rows(self) -> Tensor:
        return self.store[self.name]

    def lookup(self, ids: Sequence[int]) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        bad = ids[(ids < 0) | (ids >= self.vocab)]
        if bad.size:
            raise UnknownFeatureError(f"{self.name}: feature id {int(bad[0])} outside vocabulary {self.vocab}")
        mask = (ids != NULL_ID).astype(np.float64).reshape(-1, 1)
        return ops.take_rows(self.rows, ids) * mask


class HybridFeatureService:
    """Local ad store + remote user store with access counters."""

    def __init__(self, store: ParamStore, schema: FeatureSchema, d: int, rng: np.random.Generator,
                 ads: Iterable[AdFeatureRecord] = (), namespace: str = "default",
                 prefix: str = "feature_store"):
        self.store = store
        self.schema = schema
        self.d = d
        self.namespace = namespace
        self._lock = threading.Lock()
        self._counters = AccessCounters()
        self._local = {}

        n_f = schema.n_ad_features
        self.ad_width = max(1, int(round(d / n_f)))
        self.ad_tables = [
            EmbeddingTable(store, f"{prefix}/ad/f{i}", vocab, self.ad_width, rng)
            for i, vocab in enumerate(schema.ad_vocab)
        ]
        self.ad_projection = None
        if n_f * self.ad_width != d:
            # no bias: an all-null ad must stay the zero row
            self.ad_projection = Linear(store, f"{prefix}/ad/projection", n_f * self.ad_width, d, rng, bias=False)

        n_u = len(schema.user_vocab) + len(schema.context_vocab)
        self.user_width = max(1, int(round(d / max(n_u, 1))))
        self.user_tables = [
            EmbeddingTable(store, f"{prefix}/user/f{i}", vocab, self.user_width, rng)
            for i, vocab in enumerate(schema.user_vocab)
        ]
        self.context_tables = [
            EmbeddingTable(store, f"{prefix}/context/f{i}", vocab, self.user_width, rng)
            for i, vocab in enumerate(schema.context_vocab)
        ]
        self.user_projection = Linear(store, f"{prefix}/user/projection", n_u * self.user_width, d, rng)
        self.register_ads(ads)

    # ==========================================================================
    # Local ad store
    # ==========================================================================
    def register_ads(self, ads: Iterable[AdFeatureRecord]) -> None:
        for ad in ads:
            if len(ad.features) != self.schema.n_ad_features:
                raise UnknownFeatureError(
                    f"ad {ad.ad_id}: {len(ad.features)} features, expected {self.schema.n_ad_features}"
                )
            self._local[ad.ad_id] = ad

    def resolve_ads(self, ad_ids: Iterable[int]) -> List[AdFeatureRecord]:
        """Records for `ad_ids`; does not count as a fetch."""
        try:
            return [self._local[int(i)] for i in ad_ids]
        except KeyError as exc:
            raise UnknownFeatureError(f"ad id {exc.args[0]} not in the local ad store") from None

    def local_features(self, ad_id: int) -> Tuple[int, ...]:
        if ad_id == NULL_ID:
            return (NULL_ID,) * self.schema.n_ad_features
        try:
            return self._local[ad_id].features
        except KeyError:
            raise UnknownFeatureError(f"ad id {ad_id} not in the local ad store") from None

    def _embed_feature_rows(self, feature_rows: np.ndarray) -> Tensor:
        parts = [table.lookup(feature_rows[:, i]) for i, table in enumerate(self.ad_tables)]
        joined = ops.concat(parts, axis=1)
        return self.ad_projection(joined) if self.ad_projection else joined

    def embed_ads(self, ads: Sequence[AdFeatureRecord]) -> Tensor:
        """E_ad (N x d) from the local store; counts N local fetches."""
        n_f = self.schema.n_ad_features
        features = np.array([ad.features for ad in ads], dtype=np.int64).reshape(len(ads), n_f)
        out = self._embed_feature_rows(features)
        with self._lock:
            self._counters.local_fetches += len(ads)
            self._counters.bytes_local += len(ads) * n_f * self.ad_width * VALUE_BYTES
        return out

    # ==========================================================================
    # Remote user store
    # ==========================================================================
    def _payload(self, user: UserFeatureRecord) -> dict:
        behaviors = user.padded_behaviors(self.schema.behavior_length)
        return {
            "user_id": user.user_id,
            "features": list(user.features),
            "context": list(user.context),
            "behaviors": list(behaviors),
            "behavior_features": [list(self.local_features(ad_id)) for ad_id in behaviors],
        }

    def publish_users(self, users: Iterable[UserFeatureRecord]) -> int:
        payloads = {user.user_id: self._payload(user) for user in users}
        cache_utils.publish_payloads(payloads, self.namespace)
        return len(payloads)

    def fetch_user(self, request: UserFeatureRecord) -> Tuple[Tensor, Tensor]:
        """
        One remote call per request: returns (e_u: 1 x d, E_bhvr: L x d).
        The behavior ads' features travel in the user payload, so the
        candidate count never affects remote traffic.
        """
        user_id = request.user_id if isinstance(request, UserFeatureRecord) else int(request)
        payload = cache_utils.fetch_payload(self.namespace, user_id)
        with self._lock:
            self._counters.remote_calls += 1
            if payload is not None:
                n_ids = (len(payload["features"]) + len(payload["context"]) + len(payload["behaviors"])
                         + sum(len(f) for f in payload["behavior_features"]))
                self._counters.bytes_remote += n_ids * ID_BYTES
        if payload is None:
            raise UnknownUserError(f"user {user_id} not found in remote store '{self.namespace}'")
        if len(payload["features"]) != len(self.user_tables) or len(payload["context"]) != len(self.context_tables):
            raise UnknownFeatureError(f"user {user_id}: feature slots do not match the user schema")

        user_parts = [t.lookup([fid]) for t, fid in zip(self.user_tables, payload["features"])]
        context_parts = [t.lookup([cid]) for t, cid in zip(self.context_tables, payload["context"])]
        e_u = self.user_projection(ops.concat(user_parts + context_parts, axis=1))

        length = self.schema.behavior_length
        if length == 0:
            return e_u, Tensor(np.zeros((0, self.d)))
        rows = np.array(payload["behavior_features"], dtype=np.int64).reshape(length, self.schema.n_ad_features)
        return e_u, self._embed_feature_rows(rows)

    # ==========================================================================
    # Counters
    # ==========================================================================
    def counters_report(self) -> AccessCounters:
        with self._lock:
            return AccessCounters(**self._counters.as_dict())

    def remove_users(self, user_ids: Iterable[int]) -> None:
        cache_utils.invalidate_namespace(self.namespace, list(user_ids))

