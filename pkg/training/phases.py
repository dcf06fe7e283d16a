"""
EGA - Phase drivers
pretrain -> reward -> rlaf -> payment, each a loop of random mini-batches
with its own Adam state. Phases log through the shared MetricsLog.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from numerics.optim import Adam

from .metrics_log import MetricsLog
from .model import EGAModel
from .samples import RequestSample
from .steps import (
    LagrangianState, build_rlaf_batch, dual_update, payment_step, pretrain_step, reward_model_step,
    rlaf_step,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseSettings:
    steps: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    rho: float = 1.0
    dual_period: int = 1

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


def draw_batch(samples: Sequence[RequestSample], batch_size: int, rng: np.random.Generator) -> List[RequestSample]:
    if not samples:
        raise ValueError("no training samples")
    size = min(batch_size, len(samples))
    return [samples[i] for i in rng.choice(len(samples), size=size, replace=False)]


def _run(phase: str, step_fn, samples, settings: PhaseSettings, rng, log: Optional[MetricsLog]) -> List[float]:
    log = log or MetricsLog()
    losses = []
    logger.info(f"Phase {phase}: {settings.steps} steps, batch {settings.batch_size}, lr {settings.lr}")
    for step in range(settings.steps):
        loss = step_fn(draw_batch(samples, settings.batch_size, rng))
        losses.append(loss)
        log.append(phase, step, loss)
    return losses


def run_pretrain(model: EGAModel, samples: Sequence[RequestSample], settings: PhaseSettings,
                 rng: np.random.Generator, log: Optional[MetricsLog] = None) -> List[float]:
    optimizer = Adam(lr=settings.lr)
    return _run("pretrain", lambda batch: pretrain_step(model, optimizer, batch), samples, settings, rng, log)


def run_reward(model: EGAModel, samples: Sequence[RequestSample], settings: PhaseSettings,
               rng: np.random.Generator, log: Optional[MetricsLog] = None) -> List[float]:
    optimizer = Adam(lr=settings.lr)
    return _run("reward", lambda batch: reward_model_step(model, optimizer, batch), samples, settings, rng, log)


def run_rlaf(model: EGAModel, samples: Sequence[RequestSample], settings: PhaseSettings,
             rng: np.random.Generator, log: Optional[MetricsLog] = None) -> List[float]:
    optimizer = Adam(lr=settings.lr)

    def step(batch):
        return rlaf_step(model, optimizer, build_rlaf_batch(model, batch))

    return _run("rlaf", step, samples, settings, rng, log)


def run_payment(model: EGAModel, samples: Sequence[RequestSample], settings: PhaseSettings,
                rng: np.random.Generator, log: Optional[MetricsLog] = None,
                state: Optional[LagrangianState] = None):
    """Primal steps on the payment network with dual ascent on the multipliers; returns (losses, state)."""
    log = log or MetricsLog()
    optimizer = Adam(lr=settings.lr)
    state = state or LagrangianState(rho=settings.rho, update_period=settings.dual_period)
    losses = []
    logger.info(f"Phase payment: {settings.steps} steps, rho {state.rho}, dual period {state.update_period}")
    for step in range(settings.steps):
        loss, regrets = payment_step(model, optimizer, draw_batch(samples, settings.batch_size, rng), state)
        state = dual_update(state, regrets)
        losses.append(loss)
        mean_regret = float(np.mean(list(regrets.values()))) if regrets else 0.0
        mean_lambda = float(np.mean(list(state.lambdas.values()))) if state.lambdas else 0.0
        log.append("payment", step, loss, regret=mean_regret, mean_lambda=mean_lambda)
    return losses, state
