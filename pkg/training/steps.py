"""
EGA - Training steps
pre-training     BCE of the set-aware pCTR over K + N_s sample ads
reward model     BCE of the permutation-aware pCTR over the K exposed ads
RLAF             -sum r * log z over the generated slate, marginal-revenue rewards
payment          -(revenue - lambda * regret - rho / 2 * regret^2) with dual ascent on lambda
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from aucformer.allocation import greedy_select
from aucformer.generator import log_selection_probabilities
from aucformer.mechanisms import EGAMechanism
from evaluation.regret import GAMMA_GRID, regret_from_utilities, replace_bid
from numerics import ops
from numerics.optim import Adam
from numerics.params import gradient_of
from numerics.tensor import Tensor, no_grad

from .exceptions import IndividualRationalityError
from .model import EGAModel
from .samples import RequestSample

logger = logging.getLogger(__name__)


def _mean(terms: List[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total / float(len(terms))


def _apply(model: EGAModel, optimizer: Adam, loss: Tensor) -> float:
    grads = gradient_of(loss, model.store)
    optimizer.step(model.store, grads)
    return loss.item()


# ==============================================================================
# Pre-training and reward model
# ==============================================================================

def pretrain_loss(model: EGAModel, batch: Sequence[RequestSample]) -> Tensor:
    terms = []
    for sample in batch:
        encoded = model.encode(sample.sample_ads, sample.user_id, training=True)
        terms.append(ops.total(ops.bce(encoded.ctr_hat, sample.sample_labels)))
    return _mean(terms)


def pretrain_step(model: EGAModel, optimizer: Adam, batch: Sequence[RequestSample]) -> float:
    model.set_phase("pretrain")
    return _apply(model, optimizer, pretrain_loss(model, batch))


def reward_model_loss(model: EGAModel, batch: Sequence[RequestSample]) -> Tensor:
    terms = []
    for sample in batch:
        encoded = model.encode(sample.sample_ads, sample.user_id, training=True)
        exposed = ops.take_rows(encoded.h_ad, np.arange(len(sample.exposed)))
        q = model.evaluator(exposed, encoded.e_u, training=True)
        labels = np.array(sample.exposed_clicks, dtype=np.float64).reshape(-1, 1)
        terms.append(ops.total(ops.bce(q, labels)))
    return _mean(terms)


def reward_model_step(model: EGAModel, optimizer: Adam, batch: Sequence[RequestSample]) -> float:
    model.set_phase("reward")
    return _apply(model, optimizer, reward_model_loss(model, batch))


# ==============================================================================
# RLAF
# ==============================================================================

@dataclass
class RlafBatch:
    sequences: List[List[int]] = field(default_factory=list)
    rewards: List[np.ndarray] = field(default_factory=list)
    log_probs: List[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sequences)


def slate_revenue(winners: Sequence[int], bids: np.ndarray, evaluate: Callable[[Sequence[int]], np.ndarray]) -> float:
    if not winners:
        return 0.0
    return float(np.dot(bids[list(winners)], evaluate(winners)))


def compute_rlaf_rewards(z: np.ndarray, bids, evaluate: Callable[[Sequence[int]], np.ndarray]
                         ) -> Tuple[List[int], np.ndarray]:
    """
    r_i = sum over Y of b * q minus the same sum over Y_-i, where Y_-i is the
    greedy slate with y_i masked from every slot. `z` may be passed as log z.
    `evaluate` maps a slate to its per-slot pCTR.
    """
    bids = np.asarray(bids, dtype=np.float64).reshape(-1)
    winners = greedy_select(z)
    total = slate_revenue(winners, bids, evaluate)
    rewards = np.array([
        total - slate_revenue(greedy_select(z, exclude=[ad]), bids, evaluate)
        for ad in winners
    ])
    return winners, rewards


def build_rlaf_batch(model: EGAModel, batch: Sequence[RequestSample]) -> RlafBatch:
    """Generate slates with gradients on the generator only and score them with the frozen evaluator."""
    model.set_phase("rlaf")
    out = RlafBatch()
    for sample in batch:
        encoded = model.encode_frozen(sample.candidates, sample.user_id)
        allocation = model.generator(encoded.h_ad, encoded.ctr, encoded.bids, training=True)
        cache: Dict[Tuple[int, ...], np.ndarray] = {}

        def evaluate(winners, encoded=encoded, cache=cache):
            key = tuple(winners)
            if key not in cache:
                with no_grad():
                    cache[key] = model.evaluator.score_slate(encoded.h_ad, key, encoded.e_u).data[:, 0]
            return cache[key]

        winners, rewards = compute_rlaf_rewards(allocation.log_probabilities, encoded.bids, evaluate)
        out.sequences.append(winners)
        out.rewards.append(rewards)
        out.log_probs.append(log_selection_probabilities(allocation, winners))
    return out


def rlaf_loss(batch: RlafBatch) -> Tensor:
    terms = [ops.total(log_probs * rewards.reshape(-1, 1))
             for log_probs, rewards in zip(batch.log_probs, batch.rewards)]
    return -_mean(terms)


def rlaf_step(model: EGAModel, optimizer: Adam, batch: RlafBatch) -> float:
    model.set_phase("rlaf")
    return _apply(model, optimizer, rlaf_loss(batch))


# ==============================================================================
# Payment network
# ==============================================================================

@dataclass(frozen=True)
class LagrangianState:
    rho: float = 1.0
    update_period: int = 1
    lambdas: Mapping[int, float] = field(default_factory=dict)
    steps: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.update_period < 1:
            raise ValueError(f"update period must be >= 1, got {self.update_period}")
        if any(v < 0 for v in self.lambdas.values()):
            raise ValueError("Lagrange multipliers must be nonnegative")

    def multiplier(self, ad_id: int) -> float:
        return float(self.lambdas.get(ad_id, 0.0))


def dual_update(state: LagrangianState, regrets: Mapping[int, float]) -> LagrangianState:
    """lambda <- max(0, lambda + rho * regret) once every `update_period` calls."""
    if any(r < 0 for r in regrets.values()):
        raise ValueError("measured regrets must be nonnegative")
    steps = state.steps + 1
    if steps % state.update_period:
        return replace(state, steps=steps)
    lambdas = dict(state.lambdas)
    for ad_id, regret in regrets.items():
        lambdas[ad_id] = max(0.0, lambdas.get(ad_id, 0.0) + state.rho * regret)
    return replace(state, lambdas=lambdas, steps=steps)


def slot_utility(mechanism: EGAMechanism, bids: np.ndarray, ad: int, value: float,
                 training: bool = False) -> Optional[Tensor]:
    """ctr * (value - p) summed over the ad's slots, differentiable in p; None when unshown."""
    winners, _ = mechanism.allocate(bids)
    slots = [s for s, w in enumerate(winners) if w == ad]
    if not slots:
        return None
    result = mechanism.payment_result(winners, bids, training)
    q = result.ctr.data[slots]
    return ops.total((value - ops.take_rows(result.payment, slots)) * q)


def differentiable_regret(mechanism: EGAMechanism, bids: np.ndarray, ad: int, value: float,
                          grid: Sequence[float] = GAMMA_GRID, training: bool = False) -> Tensor:
    reference = slot_utility(mechanism, bids, ad, value, training)
    deviations = [slot_utility(mechanism, replace_bid(bids, ad, gamma * bids[ad]), ad, value, training)
                  for gamma in grid]
    return regret_from_utilities(reference, deviations)


def payment_loss(model: EGAModel, batch: Sequence[RequestSample], state: LagrangianState,
                 grid: Sequence[float] = GAMMA_GRID, rho: Optional[float] = None
                 ) -> Tuple[Tensor, Dict[int, List[float]], float]:
    """
    Returns the loss, per-ad regrets measured in this batch and the mean revenue.
    `rho` overrides the penalty weight of this loss only; 0 with no multipliers
    leaves the pure revenue objective.
    """
    rho = state.rho if rho is None else rho
    if rho < 0:
        raise ValueError(f"penalty weight must be nonnegative, got {rho}")
    terms, regrets, revenues = [], defaultdict(list), []
    for sample in batch:
        encoded = model.encode_frozen(sample.candidates, sample.user_id)
        mechanism = model.mechanism(encoded)
        winners, _ = mechanism.allocate(encoded.bids)
        result = mechanism.payment_result(winners, encoded.bids)
        charged = encoded.bids[list(winners)]
        if (result.payments > charged).any():
            raise IndividualRationalityError(
                f"request {sample.request_id}: payments {result.payments.tolist()} exceed bids {charged.tolist()}"
            )
        revenue = ops.total(result.payment * result.ctr.data)
        objective = revenue
        for ad in winners:
            ad_id = encoded.ad_ids[ad]
            regret = differentiable_regret(mechanism, encoded.bids, ad, encoded.values[ad], grid)
            regrets[ad_id].append(regret.item())
            objective = objective - state.multiplier(ad_id) * regret - (rho / 2.0) * (regret * regret)
        terms.append(objective)
        revenues.append(revenue.item())
    return -_mean(terms), dict(regrets), float(np.mean(revenues))


def payment_step(model: EGAModel, optimizer: Adam, batch: Sequence[RequestSample], state: LagrangianState,
                 grid: Sequence[float] = GAMMA_GRID, rho: Optional[float] = None) -> Tuple[float, Dict[int, float]]:
    """One descent step; returns the loss and the mean regret per winning ad for the dual update."""
    model.set_phase("payment")
    loss, regrets, _ = payment_loss(model, batch, state, grid, rho)
    value = _apply(model, optimizer, loss)
    return value, {ad_id: float(np.mean(values)) for ad_id, values in regrets.items()}
