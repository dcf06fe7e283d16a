"""
EGA - Ex-post regret and the IC metric
A misreport replaces one bid b_i with gamma * b_i, gamma on a fixed grid
that contains 1, so the measured regret of an ad is never negative.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from aucformer.mechanisms import MechanismOutcome
from numerics.tensor import Tensor

logger = logging.getLogger(__name__)

GAMMA_GRID: Tuple[float, ...] = tuple(round(0.2 * j, 12) for j in range(1, 11))
UTILITY_FLOOR = 1e-9

Mechanism = Callable[[np.ndarray], MechanismOutcome]


@dataclass
class RegretEstimate:
    ad: int
    regret: float
    samples: int
    grid: Tuple[float, ...] = GAMMA_GRID
    per_sample: List[float] = field(default_factory=list)
    best_gamma: Optional[float] = None


@dataclass
class PsiResult:
    psi: Optional[float]
    terms: int
    skipped: int
    mean_regret: float = 0.0


def replace_bid(bids, ad: int, report: float) -> np.ndarray:
    out = np.array(bids, dtype=np.float64).reshape(-1)
    out[ad] = report
    return out


def empirical_regret(mechanism: Mechanism, bids, ad: int, values: Sequence[float],
                     grid: Sequence[float] = GAMMA_GRID) -> RegretEstimate:
    """
    Mean over valuation samples v of max over gamma of
    u(v; gamma * b_i, b_-i) - u(v; b_i, b_-i).
    """
    bids = np.asarray(bids, dtype=np.float64).reshape(-1)
    base = mechanism(bids)
    outcomes = [(gamma, mechanism(replace_bid(bids, ad, gamma * bids[ad]))) for gamma in grid]
    per_sample, best_gamma = [], None
    for value in values:
        reference = base.utility(ad, value)
        gains = [outcome.utility(ad, value) - reference for _, outcome in outcomes]
        best = int(np.argmax(gains))
        per_sample.append(max(gains[best], 0.0))
        best_gamma = grid[best]
    regret = float(np.mean(per_sample)) if per_sample else 0.0
    return RegretEstimate(ad=ad, regret=regret, samples=len(per_sample), grid=tuple(grid),
                          per_sample=per_sample, best_gamma=best_gamma)


def regret_from_utilities(reference: Optional[Tensor], deviations: Sequence[Optional[Tensor]]) -> Tensor:
    """
    Differentiable regret: the best deviation minus the reference utility, or a
    constant zero when no deviation gains. `None` stands for an ad left unshown.
    """
    def value(u):
        return 0.0 if u is None else u.item()

    zero = Tensor(np.zeros((1, 1)))
    if not deviations:
        return zero
    best = max(range(len(deviations)), key=lambda j: value(deviations[j]))
    if value(deviations[best]) - value(reference) <= 0.0:
        return zero
    top = deviations[best] if deviations[best] is not None else zero
    return top - (reference if reference is not None else zero)


def psi_from_terms(regrets: Iterable[float], utilities: Iterable[float],
                   floor: float = UTILITY_FLOOR) -> PsiResult:
    regrets = [float(r) for r in regrets]
    ratios, skipped = [], 0
    for regret, utility in zip(regrets, utilities):
        if utility <= floor:
            skipped += 1
            continue
        ratios.append(regret / utility)
    if skipped:
        logger.debug(f"IC metric skipped {skipped} terms with utility <= {floor}")
    return PsiResult(psi=float(np.mean(ratios)) if ratios else None, terms=len(ratios), skipped=skipped,
                     mean_regret=float(np.mean(regrets)) if regrets else 0.0)


def request_regret_terms(mechanism: Mechanism, bids, values,
                         grid: Sequence[float] = GAMMA_GRID) -> Tuple[List[float], List[float]]:
    """(regrets, utilities) of each distinct winner of one request."""
    bids = np.asarray(bids, dtype=np.float64).reshape(-1)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    outcome = mechanism(bids)
    regrets, utilities = [], []
    for ad in dict.fromkeys(outcome.winners):
        utilities.append(outcome.utility(ad, values[ad]))
        regrets.append(empirical_regret(mechanism, bids, ad, [values[ad]], grid).regret)
    return regrets, utilities


def psi_metric(requests: Iterable[Tuple[Mechanism, np.ndarray, np.ndarray]],
               grid: Sequence[float] = GAMMA_GRID) -> PsiResult:
    """
    Mean over requests and winning ads of regret / realized utility. Each request
    is (mechanism, submitted bids, private values).
    """
    regrets, utilities = [], []
    for mechanism, bids, values in requests:
        request_regrets, request_utilities = request_regret_terms(mechanism, bids, values, grid)
        regrets.extend(request_regrets)
        utilities.extend(request_utilities)
    return psi_from_terms(regrets, utilities)
