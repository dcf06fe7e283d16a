"""
EGA - FLOP accounting
A process-wide accumulator fed by every forward matmul. Sections are
thread-local so concurrent request evaluation attributes work correctly.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Dict

logger = logging.getLogger(__name__)


class FlopCounter:
    """Atomic FLOP accumulator with named, nestable sections."""

    def __init__(self):
        self._lock = threading.Lock()
        self._local = threading.local()
        self._total = 0
        self._sections: Dict[str, int] = {}

    def _stack(self):
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = self._local.stack = []
        return stack

    def add(self, flops: int) -> None:
        active = tuple(self._stack())
        with self._lock:
            self._total += flops
            for name in active:
                self._sections[name] = self._sections.get(name, 0) + flops

    @contextmanager
    def section(self, name: str):
        """Attribute FLOPs counted inside the block to `name` as well as the total."""
        stack = self._stack()
        stack.append(name)
        try:
            yield self
        finally:
            stack.pop()

    @property
    def total(self) -> int:
        with self._lock:
            return self._total

    def section_total(self, name: str) -> int:
        with self._lock:
            return self._sections.get(name, 0)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            data = dict(self._sections)
            data["total"] = self._total
        return data

    def reset(self) -> None:
        with self._lock:
            self._total = 0
            self._sections.clear()
        logger.debug("FLOP counter reset")


FLOPS = FlopCounter()


@contextmanager
def measure(name: str = None):
    """
    Yield a dict that holds the FLOPs spent inside the block once it exits.

    Usage:
        with measure("gcf") as spent:
            model.gcf_forward(...)
        spent["flops"]
    """
    result = {"flops": 0}
    before = FLOPS.section_total(name) if name else FLOPS.total
    try:
        yield result
    finally:
        after = FLOPS.section_total(name) if name else FLOPS.total
        result["flops"] = after - before
