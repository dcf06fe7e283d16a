"""
EGA - Per-step metrics log
One JSON line per optimizer step under <out>/metrics.jsonl.
"""
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from rest_framework import serializers

from .serializers import StepLogSerializer

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"


@dataclass
class StepLog:
    phase: str
    step: int
    loss: float
    extras: Dict[str, float] = field(default_factory=dict)


class MetricsLog:
    """Appends validated step records; `path=None` keeps them in memory only."""

    def __init__(self, path=None, log_every: int = 10):
        self.path = Path(path) if path is not None else None
        self.log_every = max(1, log_every)
        self.records: List[StepLog] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    @classmethod
    def in_directory(cls, out_dir, log_every: int = 10) -> "MetricsLog":
        return cls(Path(out_dir) / METRICS_FILE, log_every=log_every)

    def append(self, phase: str, step: int, loss: float, **extras: float) -> StepLog:
        serializer = StepLogSerializer(data={"phase": phase, "step": step, "loss": loss,
                                             "extras": {k: float(v) for k, v in extras.items()}})
        serializer.is_valid(raise_exception=True)
        record = StepLog(**{k: v for k, v in serializer.validated_data.items() if k != "schema_version"})
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(StepLogSerializer(record).data, sort_keys=True) + "\n")
        if step % self.log_every == 0:
            logger.info(f"[{phase}] step {step}: loss={loss:.6f}"
                        + "".join(f" {k}={v:.6f}" for k, v in record.extras.items()))
        return record

    def losses(self, phase: Optional[str] = None) -> List[float]:
        return [r.loss for r in self.records if phase is None or r.phase == phase]


def read_metrics(path) -> List[StepLog]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            serializer = StepLogSerializer(data=json.loads(line))
            if not serializer.is_valid():
                raise serializers.ValidationError({"file": str(path), "line": lineno, **serializer.errors})
            data = serializer.validated_data
            records.append(StepLog(phase=data["phase"], step=data["step"], loss=data["loss"],
                                   extras=dict(data["extras"])))
    return records
