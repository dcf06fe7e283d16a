"""
EGA - Encoder configuration
"""
import math
from dataclasses import dataclass
from typing import Tuple

from .exceptions import InvalidConfigError

FUSION_MODES = ("both", "target", "context", "none", "late")


@dataclass(frozen=True)
class RecFormerConfig:
    m: int
    m_c: int
    d: int
    n_clusters: int
    n_heads: int
    fusion_mode: str = "both"

    def __post_init__(self):
        if self.m < 0:
            raise InvalidConfigError(f"depth m must be >= 0, got {self.m}")
        if self.m_c < 1:
            raise InvalidConfigError(f"fusion interval m_c must be >= 1, got {self.m_c}")
        if self.n_heads < 1 or self.d % self.n_heads:
            raise InvalidConfigError(f"d={self.d} must be divisible by N_h={self.n_heads}")
        if self.n_clusters < 1:
            raise InvalidConfigError(f"N_c must be >= 1, got {self.n_clusters}")
        if self.fusion_mode not in FUSION_MODES:
            raise InvalidConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")

    @property
    def m_k(self) -> int:
        return math.ceil(self.m / self.m_c)

    @property
    def fusion_layers(self) -> Tuple[int, ...]:
        """1-based layer indices {m_c, 2m_c, ...} within [1, m]."""
        return tuple(range(self.m_c, self.m + 1, self.m_c))

    @property
    def mid_fusion(self) -> bool:
        return self.fusion_mode not in ("none", "late")

    @property
    def uses_target(self) -> bool:
        return self.fusion_mode in ("both", "target")

    @property
    def uses_context(self) -> bool:
        return self.fusion_mode in ("both", "context")
