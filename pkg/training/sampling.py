"""
EGA - Popularity sampling of unexposed ads
Sampling mass is count ** 0.75, which favors popular ads while keeping the
long tail reachable. Ads with zero count are never drawn.
"""
import logging
from typing import Iterable, Sequence

import numpy as np

from .exceptions import NegativeSamplingError

logger = logging.getLogger(__name__)

SMOOTHING_EXPONENT = 0.75


def popularity_weights(counts: Sequence[float], exponent: float = SMOOTHING_EXPONENT) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64).reshape(-1)
    if counts.size == 0:
        raise NegativeSamplingError("popularity counts are empty")
    if (counts < 0).any():
        raise NegativeSamplingError("popularity counts must be nonnegative")
    mass = np.power(counts, exponent)
    total = mass.sum()
    if total <= 0:
        raise NegativeSamplingError("every ad has zero popularity")
    return mass / total


def sample_negatives(ad_ids: Sequence[int], counts: Sequence[float], n_s: int, rng: np.random.Generator,
                     exclude: Iterable[int] = ()) -> np.ndarray:
    """Draw `n_s` distinct ad ids without replacement, skipping `exclude`."""
    ad_ids = np.asarray(ad_ids, dtype=np.int64).reshape(-1)
    counts = np.asarray(counts, dtype=np.float64).reshape(-1).copy()
    if len(ad_ids) != len(counts):
        raise NegativeSamplingError(f"{len(ad_ids)} ids but {len(counts)} counts")
    if n_s > len(ad_ids):
        raise NegativeSamplingError(f"N_s={n_s} exceeds corpus size {len(ad_ids)}")
    excluded = set(int(i) for i in exclude)
    if excluded:
        counts[np.isin(ad_ids, list(excluded))] = 0.0
    available = int((counts > 0).sum())
    if n_s > available:
        raise NegativeSamplingError(f"N_s={n_s} exceeds the {available} ads with nonzero sampling mass")
    if n_s == 0:
        return np.zeros(0, dtype=np.int64)
    return rng.choice(ad_ids, size=n_s, replace=False, p=popularity_weights(counts))
