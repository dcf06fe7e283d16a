"""
EGA - Closed-form FLOPs and measured-counter comparison

Transformer block:          4 L^2 d + 24 L d^2
Cross block (L1 over L2):   4 L1 L2 d + 20 L1 d^2 + 4 L2 d^2
Cascade (pre-rank + rank):  N d + 2 L d^2  +  m_r [4 N_r (L+1)^2 d + 24 N_r (L+1) d^2]
Generative pipeline:        GCF m (10 N N_c d + 24 N d^2)
                            MIF m_k (N + L) N_c d
                            AucFormer m_e (4 N_a^2 d + 24 N_a d^2) + m_e (4 K N_a d + 18 K d^2 + 4 N_a d^2)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

from numerics.flops import FLOPS

from .exceptions import FlopsConfigError

logger = logging.getLogger(__name__)

MEASURED_SECTIONS = ("gcf", "gcf_usr", "mif", "ctr_head", "auf")
TOLERANCE = 0.10

ATTRIBUTION = {
    "gcf": "counter covers matmuls only; the closed form has no layer-norm, softmax exp or residual terms "
           "and books the cluster step as 10 N N_c d",
    "mif": "closed form counts one attention product per direction and omits the projections and FFN "
           "of each fusion block",
    "auf": "closed form treats generator and evaluator as standard blocks; the counter sees cluster "
           "attention, slot refinement and the score head",
}


# ==============================================================================
# Printed formulas
# ==============================================================================

def block(l, d):
    return 4 * l ** 2 * d + 24 * l * d ** 2


def block2(l1, l2, d):
    return 4 * l1 * l2 * d + 20 * l1 * d ** 2 + 4 * l2 * d ** 2


def pre(n, l, d):
    return n * d + 2 * l * d ** 2


def rank(m_r, n_r, l, d):
    return m_r * (4 * n_r * (l + 1) ** 2 * d + 24 * n_r * (l + 1) * d ** 2)


def mca(n, l, d, m_r, n_r):
    return pre(n, l, d) + rank(m_r, n_r, l, d)


def gcf(m, n, n_c, d):
    return m * (6 * n * n_c * d + 4 * n * n_c * d + 24 * n * d ** 2)


def mif(m_k, n, l, n_c, d):
    return m_k * (n + l) * n_c * d


def auf(m_e, n_a, k, d):
    return m_e * (4 * n_a ** 2 * d + 24 * n_a * d ** 2) + m_e * (4 * k * n_a * d + 18 * k * d ** 2 + 4 * n_a * d ** 2)


def ega(m, m_k, m_e, n, l, n_c, n_a, k, d):
    return gcf(m, n, n_c, d) + mif(m_k, n, l, n_c, d) + auf(m_e, n_a, k, d)


def approx_ratio(m_k, m_r, n, n_r, l, d) -> float:
    """Large-N ratio of the generative pipeline to the cascade: 2 m_k N L d^2 / (m_r N_r 4 L^2 d)."""
    return (2 * m_k * n * l * d ** 2) / (m_r * n_r * 4 * l ** 2 * d)


def fusion_paradigm_flops(m, m_c, n, l, n_c, d) -> Dict[str, float]:
    """Early, late and mid fusion cost of the behavior/candidate interaction."""
    m_k = math.ceil(m / m_c)
    return {
        "early": m * n * (l + 1) ** 2 * d,
        "late": (n * l + m * l ** 2) * d,
        "mid": m_k * (n + l) * n_c * d,
    }


# ==============================================================================
# Reports
# ==============================================================================

@dataclass(frozen=True)
class FlopsConfig:
    n: int
    l: int
    d: int
    n_c: int
    m: int
    m_c: int
    m_e: int
    k: int
    n_a: Optional[int] = None
    m_r: Optional[int] = None
    alpha: float = 0.033

    def __post_init__(self):
        for key in ("n", "l", "d", "n_c", "m", "m_c", "m_e", "k"):
            if getattr(self, key) < 1:
                raise FlopsConfigError(f"{key} must be a positive integer, got {getattr(self, key)}")
        if not 0 < self.alpha <= 1:
            raise FlopsConfigError(f"alpha must be in (0, 1], got {self.alpha}")

    @property
    def m_k(self) -> int:
        return math.ceil(self.m / self.m_c)

    @property
    def n_valid(self) -> int:
        return self.n if self.n_a is None else self.n_a

    @property
    def ranking_depth(self) -> int:
        return self.m if self.m_r is None else self.m_r

    @property
    def n_r(self) -> float:
        return self.alpha * self.n


@dataclass
class FlopsComparison:
    module: str
    closed_form: float
    measured: int
    ratio: Optional[float]
    flagged: bool
    note: str = ""


@dataclass
class FlopsReport:
    closed_form: Dict[str, float]
    measured: Dict[str, int] = field(default_factory=dict)
    ratio: float = 0.0
    approx_ratio: float = 0.0
    comparisons: List[FlopsComparison] = field(default_factory=list)


def flops_closed_form(config: FlopsConfig) -> FlopsReport:
    c = config
    closed = {
        "block": block(c.l, c.d),
        "block2": block2(c.n, c.l, c.d),
        "pre": pre(c.n, c.l, c.d),
        "rank": rank(c.ranking_depth, c.n_r, c.l, c.d),
        "mca": mca(c.n, c.l, c.d, c.ranking_depth, c.n_r),
        "gcf": gcf(c.m, c.n, c.n_c, c.d),
        "mif": mif(c.m_k, c.n, c.l, c.n_c, c.d),
        "auf": auf(c.m_e, c.n_valid, c.k, c.d),
    }
    closed["ega"] = closed["gcf"] + closed["mif"] + closed["auf"]
    return FlopsReport(
        closed_form={key: float(value) for key, value in closed.items()},
        ratio=closed["ega"] / closed["mca"],
        approx_ratio=approx_ratio(c.m_k, c.ranking_depth, c.n, c.n_r, c.l, c.d),
    )


def measure_sections(run: Callable[[], object]) -> Dict[str, int]:
    """FLOPs each counter section gains while `run()` executes."""
    before = {name: FLOPS.section_total(name) for name in MEASURED_SECTIONS}
    run()
    return {name: FLOPS.section_total(name) - before[name] for name in MEASURED_SECTIONS}


def flops_compare(measured: Mapping[str, int], report: FlopsReport, tolerance: float = TOLERANCE) -> FlopsReport:
    """Attach measured counters and per-module measured/closed-form ratios to `report`."""
    comparisons = []
    for module, note in ATTRIBUTION.items():
        closed = report.closed_form.get(module, 0.0)
        spent = int(measured.get(module, 0))
        ratio = spent / closed if closed > 0 else None
        flagged = ratio is None or abs(ratio - 1.0) > tolerance
        if flagged:
            logger.warning(f"FLOPs {module}: measured {spent} vs closed form {closed:.0f} ({note})")
        comparisons.append(FlopsComparison(module=module, closed_form=closed, measured=spent, ratio=ratio,
                                           flagged=flagged, note=note if flagged else ""))
    report.measured = {key: int(value) for key, value in measured.items()}
    report.comparisons = comparisons
    return report
