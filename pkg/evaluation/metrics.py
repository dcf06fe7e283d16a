"""
EGA - Offline metrics
Ranking quality of the pCTR scores, expected click/revenue of produced
slates under the evaluator, deviation of mean pCTR from realized CTR,
and realized CTR/RPM from replaying slates against a click oracle.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import roc_auc_score

from .exceptions import MetricInputError

logger = logging.getLogger(__name__)


@dataclass
class RankingMetrics:
    auc: Optional[float]
    recall_at_k: Optional[float]


def _vectors(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise MetricInputError(f"{scores.size} scores vs {labels.size} labels")
    if not np.isin(labels, (0, 1)).all():
        raise MetricInputError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def auc_score(scores, labels) -> Optional[float]:
    """Pairwise AUC with ties counted as one half; None without both classes."""
    scores, labels = _vectors(scores, labels)
    if labels.min(initial=1) == labels.max(initial=0):
        return None
    return float(roc_auc_score(labels, scores))


def recall_at_k(scores, labels, k: int, positives: Optional[Iterable[int]] = None) -> Optional[float]:
    """
    |top-k by score ∩ positives| / |positives|; `positives` are row indices and
    default to the rows labelled 1. Score ties resolve to the lower index.
    """
    scores, labels = _vectors(scores, labels)
    if k < 0:
        raise MetricInputError(f"k must be >= 0, got {k}")
    reference = set(np.flatnonzero(labels).tolist() if positives is None else (int(i) for i in positives))
    if not reference:
        return None
    top = np.argsort(-scores, kind="stable")[:k]
    return len(reference.intersection(top.tolist())) / len(reference)


def ranking_metrics(scores, labels, k: int, positives: Optional[Iterable[int]] = None) -> RankingMetrics:
    return RankingMetrics(auc=auc_score(scores, labels), recall_at_k=recall_at_k(scores, labels, k, positives))


def expected_value_metrics(slates: Iterable[Tuple[Sequence[float], Sequence[float]]]) -> Tuple[float, float]:
    """
    (eCTR, eRPM) over requests given (per-slot pCTR, per-slot payment):
    eCTR = mean of sum q * 100, eRPM = mean of sum q * p * 1000.
    """
    ectr, erpm = [], []
    for ctr, payments in slates:
        ctr = np.asarray(ctr, dtype=np.float64).reshape(-1)
        payments = np.asarray(payments, dtype=np.float64).reshape(-1)
        if ctr.shape != payments.shape:
            raise MetricInputError(f"{ctr.size} slot pCTRs vs {payments.size} payments")
        ectr.append(ctr.sum() * 100.0)
        erpm.append(float(np.dot(ctr, payments)) * 1000.0)
    if not ectr:
        raise MetricInputError("no requests to evaluate")
    return float(np.mean(ectr)), float(np.mean(erpm))


def deviation(pctr: float, ctr: float) -> Optional[float]:
    """|1 - pCTR / CTR|; None when the realized CTR is not positive."""
    if ctr <= 0:
        return None
    return abs(1.0 - pctr / ctr)


def realized_metrics(slates: Iterable[Tuple[Sequence[float], Sequence[float]]],
                     rng: np.random.Generator) -> Tuple[float, float]:
    """
    Replay slates given (oracle click probability per slot, payment per slot):
    CTR = clicks / impressions * 100, RPM = sum click * payment / impressions * 1000.
    """
    clicks = impressions = 0
    revenue = 0.0
    for probabilities, payments in slates:
        probabilities = np.asarray(probabilities, dtype=np.float64).reshape(-1)
        payments = np.asarray(payments, dtype=np.float64).reshape(-1)
        if probabilities.shape != payments.shape:
            raise MetricInputError(f"{probabilities.size} click probabilities vs {payments.size} payments")
        drawn = rng.random(probabilities.size) < probabilities
        clicks += int(drawn.sum())
        impressions += probabilities.size
        revenue += float(np.dot(drawn, payments))
    if impressions == 0:
        raise MetricInputError("no impressions to replay")
    return clicks / impressions * 100.0, revenue / impressions * 1000.0
