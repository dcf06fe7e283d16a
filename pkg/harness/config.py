"""
EGA - Run configuration
Flat `key = value` files read through python-decouple, typed by the
defaults below and validated by RunConfigSerializer.
"""
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from decouple import Config, RepositoryEnv
from rest_framework import serializers

from training.model import ModelConfig
from training.phases import PhaseSettings

from .world import WorldConfig

logger = logging.getLogger(__name__)

FUSION_VARIANTS = {"both": "ega", "none": "ega-mif", "target": "ega-ca", "context": "ega-ta", "late": "ega-late"}


@dataclass(frozen=True)
class RunConfig:
    run_name: str = "ega"
    seed: int = 0
    # world
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
    # data
    n_train: int = 1024
    n_test: int = 128
    # model
    d: int = 32
    n_clusters: int = 16
    n_heads: int = 4
    m: int = 2
    m_c: int = 1
    m_e: int = 2
    fusion_mode: str = "both"
    allocator: str = "ega"
    # training
    lr: float = 1e-3
    batch_size: int = 128
    pretrain_steps: int = 200
    reward_steps: int = 200
    rlaf_steps: int = 100
    payment_steps: int = 100
    rho: float = 1.0
    dual_period: int = 1
    # evaluation
    recall_k: int = 50

    @property
    def world(self) -> WorldConfig:
        names = {f.name for f in fields(WorldConfig)}
        return WorldConfig(**{k: v for k, v in asdict(self).items() if k in names})

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(d=self.d, k=self.k, n_clusters=self.n_clusters, n_heads=self.n_heads,
                           m=self.m, m_c=self.m_c, m_e=self.m_e, fusion_mode=self.fusion_mode)

    def phase_settings(self, phase: str) -> PhaseSettings:
        steps = {
            "pretrain": self.pretrain_steps,
            "reward": self.reward_steps,
            "rlaf": self.rlaf_steps,
            "payment": self.payment_steps,
        }[phase]
        return PhaseSettings(steps=steps, batch_size=self.batch_size, lr=self.lr, rho=self.rho,
                             dual_period=self.dual_period)

    @property
    def variant(self) -> str:
        """Report label: `ega`, or the ablation it runs."""
        if self.allocator == "gsp":
            return "ega-auf"
        return FUSION_VARIANTS[self.fusion_mode]

    @property
    def run_id(self) -> str:
        return f"{self.run_name}-{self.variant}-s{self.seed}"


DEFAULTS = RunConfig()


def load_run_config(path=None, seed: Optional[int] = None) -> RunConfig:
    """Read `path` (or the defaults alone), apply a CLI seed override and validate."""
    from .serializers import RunConfigSerializer

    data = asdict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise serializers.ValidationError({"config": f"config file not found: {path}"})
        repository = RepositoryEnv(str(path))
        unknown = sorted(set(repository.data) - set(data))
        if unknown:
            raise serializers.ValidationError({key: "unknown configuration key" for key in unknown})
        source = Config(repository)
        for f in fields(RunConfig):
            default = getattr(DEFAULTS, f.name)
            try:
                data[f.name] = source(f.name, default=default, cast=type(default))
            except ValueError:
                raise serializers.ValidationError(
                    {f.name: f"expected {type(default).__name__}, got {repository[f.name]!r}"}
                ) from None
        logger.debug(f"Run config read from {path}")
    if seed is not None:
        data["seed"] = seed
    serializer = RunConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.to_config()
