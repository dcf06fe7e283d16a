"""
EGA - Metric reports
One MetricReport per (run, variant); tables and seed summaries go through pandas.
"""
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, Optional

import pandas as pd

logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    run_id: str
    variant: str
    auc: Optional[float] = None
    recall_at_k: Optional[float] = None
    ectr: float = 0.0
    erpm: float = 0.0
    deviation: Optional[float] = None
    psi: Optional[float] = None
    psi_skipped: int = 0
    mean_regret: float = 0.0
    realized_ctr: Optional[float] = None
    realized_rpm: Optional[float] = None
    requests: int = 0

    def __post_init__(self):
        for name in ("auc", "recall_at_k"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.deviation is not None and self.deviation < 0:
            raise ValueError(f"deviation must be nonnegative, got {self.deviation}")


METRIC_COLUMNS = tuple(f.name for f in fields(MetricReport) if f.name not in ("run_id", "variant"))


def reports_frame(reports: Iterable[MetricReport]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in reports], columns=["run_id", "variant", *METRIC_COLUMNS])


def write_csv(reports: Iterable[MetricReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = reports_frame(reports)
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {len(frame)} metric rows to {path}")
    return path


def summarize_runs(reports: Iterable[MetricReport]) -> Dict[str, Dict[str, Dict[str, float]]]:
    """variant -> metric -> {"mean", "std", "count"} across runs; absent values are ignored."""
    frame = reports_frame(reports)
    if frame.empty:
        return {}
    numeric = frame[["variant", *METRIC_COLUMNS]].copy()
    for column in METRIC_COLUMNS:
        numeric[column] = pd.to_numeric(numeric[column], errors="coerce")
    grouped = numeric.groupby("variant")
    stats = grouped.agg(["mean", "std", "count"])
    out: Dict[str, Dict[str, Dict[str, float]]] = {}
    for variant, row in stats.iterrows():
        out[variant] = {
            metric: {
                "mean": None if pd.isna(row[(metric, "mean")]) else float(row[(metric, "mean")]),
                "std": 0.0 if pd.isna(row[(metric, "std")]) else float(row[(metric, "std")]),
                "count": int(row[(metric, "count")]),
            }
            for metric in METRIC_COLUMNS
        }
    return out
