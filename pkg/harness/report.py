"""
EGA - Run reports
One JSON file per run under <out>/reports/, re-loadable bit-exactly.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from evaluation.flops import FlopsReport
from evaluation.reports import MetricReport

logger = logging.getLogger(__name__)

REPORTS_DIR = "reports"


@dataclass
class RunReport:
    run_id: str
    phase: str
    seed: int
    wall_time: float
    metrics: List[MetricReport] = field(default_factory=list)
    flops: Optional[FlopsReport] = None
    losses: Dict[str, float] = field(default_factory=dict)


def report_path(out_dir, run_id: str, phase: str) -> Path:
    return Path(out_dir) / REPORTS_DIR / f"{run_id}-{phase}.json"


def write_report(out_dir, report: RunReport) -> Path:
    from .serializers import RunReportSerializer

    path = report_path(out_dir, report.run_id, report.phase)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(RunReportSerializer(report).data, sort_keys=True, indent=2), encoding="utf-8")
    logger.info(f"Run report written: {path}")
    return path


def read_report(path) -> RunReport:
    from .serializers import RunReportSerializer

    serializer = RunReportSerializer(data=json.loads(Path(path).read_text(encoding="utf-8")))
    serializer.is_valid(raise_exception=True)
    return serializer.to_record()


def read_reports(out_dir) -> List[RunReport]:
    directory = Path(out_dir) / REPORTS_DIR
    if not directory.is_dir():
        return []
    return [read_report(path) for path in sorted(directory.glob("*.json"))]
