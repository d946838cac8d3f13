import time
import logging
from contextlib import contextmanager
from typing import Dict, Iterator

logger = logging.getLogger(__name__)


class StageTimer:
    def __init__(self):
        self.stages: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Accumulate wall time spent inside the block under `name`"""
        start = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - start
            self.stages[name] = self.stages.get(name, 0.0) + elapsed
            logger.debug(f"Stage {name} took {elapsed:.3f} seconds")

    def get(self, name: str) -> float:
        return self.stages.get(name, 0.0)

    @property
    def total(self) -> float:
        return sum(self.stages.values())
