import abc
import logging
from typing import TYPE_CHECKING, Any, Callable, Dict, Optional

if TYPE_CHECKING:
    from botdr.clocks import StageClock
    from botdr.data import AggregateStats


class AbstractRenderer(abc.ABC):
    @abc.abstractmethod
    def render(self, clock: "StageClock") -> None:
        ...


TIME_FIELDS: Dict[str, Callable[["AggregateStats"], float]] = {
    "mean": lambda times: times.mean,
    "std": lambda times: times.std,
    "min": lambda times: times.min,
    "max": lambda times: times.max,
    "last": lambda times: times.last,
    "total": lambda times: times.mean * times.count,
}

RAW_FIELDS: Dict[str, Callable[["AggregateStats"], int]] = {
    "count": lambda times: times.count,
}

CONSTANT_FIELDS: Dict[str, Callable[["AggregateStats"], str]] = {
    "name": lambda times: times.name,
}


class LoggingRenderer(AbstractRenderer):
    """One ``"stage"`` record per stage, durations in seconds as ``extra`` fields.

    ``extra_as_kwargs`` passes the fields as keyword arguments instead, for
    structured loggers that take them that way.
    """

    def __init__(
        self,
        logger: Optional[logging.Logger] = None,
        level: str = "INFO",
        extra_as_kwargs: bool = False,
    ) -> None:
        self.logger = logger or logging.getLogger("botdr")
        self.level = logging.getLevelNamesMapping()[level]
        self.extra_as_kwargs = extra_as_kwargs

    @staticmethod
    def fields(stage: str, times: "AggregateStats") -> Dict[str, Any]:
        return {
            "stage": stage,
            "mean": times.mean * 1e-9,
            "std": times.std * 1e-9,
            "min": times.min * 1e-9,
            "max": times.max * 1e-9,
            "count": times.count,
        }

    def render(self, clock: "StageClock") -> None:
        for stage, times in clock.times.items():
            fields = self.fields(stage, times)
            if self.extra_as_kwargs:
                self.logger.log(self.level, "stage", **fields)
            else:
                self.logger.log(self.level, "stage", extra=fields)
