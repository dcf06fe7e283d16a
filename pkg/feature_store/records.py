"""
EGA - Feature records
Ad ids start at 1; id 0 is the null ad used to pad behavior sequences.
Feature-value id 0 is the null value of every categorical table.
"""
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .exceptions import InvalidRecordError, UnknownAdError

NULL_ID = 0


@dataclass(frozen=True)
class AdFeatureRecord:
    ad_id: int
    features: Tuple[int, ...]
    bid: float
    private_value: float

    def __post_init__(self):
        if self.bid <= 0:
            raise InvalidRecordError(f"ad {self.ad_id}: bid must be positive, got {self.bid}")
        if self.private_value <= 0:
            raise InvalidRecordError(
                f"ad {self.ad_id}: private value must be positive, got {self.private_value}"
            )


@dataclass(frozen=True)
class UserFeatureRecord:
    user_id: int
    features: Tuple[int, ...]
    behaviors: Tuple[int, ...]
    timestamps: Tuple[int, ...]
    context: Tuple[int, ...]

    def __post_init__(self):
        if len(self.behaviors) != len(self.timestamps):
            raise InvalidRecordError(
                f"user {self.user_id}: {len(self.behaviors)} behaviors vs {len(self.timestamps)} timestamps"
            )

    def padded_behaviors(self, length: int) -> Tuple[int, ...]:
        """Most recent `length` behaviors, right-padded with the null ad."""
        recent = tuple(self.behaviors[-length:]) if length else ()
        return recent + (NULL_ID,) * (length - len(recent))


@dataclass
class AccessCounters:
    local_fetches: int = 0
    remote_calls: int = 0
    bytes_local: int = 0
    bytes_remote: int = 0

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass(frozen=True)
class FeatureSchema:
    """Vocabulary sizes (null id included) of every categorical table."""
    ad_vocab: Tuple[int, ...]
    user_vocab: Tuple[int, ...]
    context_vocab: Tuple[int, ...]
    behavior_length: int

    @property
    def n_ad_features(self) -> int:
        return len(self.ad_vocab)


@dataclass
class AdCorpus:
    """In-memory ad map plus platform-wide popularity counts."""
    ads: List[AdFeatureRecord]
    popularity: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id = {ad.ad_id: ad for ad in self.ads}

    def __len__(self) -> int:
        return len(self.ads)

    def __getitem__(self, ad_id: int) -> AdFeatureRecord:
        try:
            return self._by_id[ad_id]
        except KeyError:
            raise UnknownAdError(ad_id) from None

    def get_many(self, ad_ids: Iterable[int]) -> List[AdFeatureRecord]:
        return [self[int(i)] for i in ad_ids]

    @property
    def ad_ids(self) -> np.ndarray:
        return np.array([ad.ad_id for ad in self.ads], dtype=np.int64)

    def popularity_counts(self, ad_ids: Sequence[int] = None) -> np.ndarray:
        ids = self.ad_ids if ad_ids is None else ad_ids
        return np.array([self.popularity.get(int(i), 0) for i in ids], dtype=np.float64)

    def bids(self, ad_ids: Sequence[int]) -> np.ndarray:
        return np.array([self[int(i)].bid for i in ad_ids], dtype=np.float64)

    def values(self, ad_ids: Sequence[int]) -> np.ndarray:
        return np.array([self[int(i)].private_value for i in ad_ids], dtype=np.float64)
