import logging
import time
from contextlib import contextmanager
from typing import TYPE_CHECKING, Callable, Dict, Iterator, Optional

if TYPE_CHECKING:
    from botdr.renderers import AbstractRenderer

from botdr.data import AggregateStats
from botdr.utils import value_from_env

logger = logging.getLogger("botdr.clocks")


class StageClock:
    """Wall-clock durations of named pipeline stages, in ns.

    Each stage keeps running aggregates so a stage entered several times
    (one retrieval per branch, say) reports mean/min/max over its runs.
    """

    def __init__(
        self,
        timer: Optional[Callable[[], int]] = None,
        enabled: Optional[bool] = None,
    ) -> None:
        self._timer = timer or time.perf_counter_ns
        self._enabled = enabled
        if self._enabled is None:
            self._enabled = not value_from_env("BOTDR_DISABLE_TIMING", False)
        self._tick_time_ns: Dict[str, int] = {}
        self.times: Dict[str, AggregateStats] = {}

    def tick(self, stage: str) -> "StageClock":
        if self.is_enabled():
            self._tick_time_ns[stage] = self._timer()
        return self

    def tock(self, stage: str) -> Optional[float]:
        if not self.is_enabled():
            return None
        tock_time_ns = self._timer()
        if stage not in self._tick_time_ns:
            raise ValueError(f"Stage {stage} was not ticked.")
        dt = tock_time_ns - self._tick_time_ns.pop(stage)
        if stage not in self.times:
            self.times[stage] = AggregateStats(name=stage)
        self.times[stage].update(dt)
        logger.debug("stage %s took %d ns", stage, dt)
        return dt

    @contextmanager
    def stage(self, name: str) -> Iterator["StageClock"]:
        self.tick(name)
        try:
            yield self
        finally:
            self.tock(name)

    def durations_ns(self) -> Dict[str, float]:
        """Total time spent per stage."""
        return {name: times.mean * times.count for name, times in self.times.items()}

    def render(self, renderer: "AbstractRenderer") -> None:
        renderer.render(self)

    def enable(self) -> None:
        self._enabled = True

    def disable(self) -> None:
        self._enabled = False

    def is_enabled(self) -> bool:
        return bool(self._enabled)
