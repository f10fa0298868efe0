"""Plain-text stage table printed by ``--timings``."""
import logging
import sys
from dataclasses import dataclass, field
from string import Formatter
from typing import TYPE_CHECKING, Dict, List, Optional, TextIO

from botdr.renderers import (
    CONSTANT_FIELDS,
    RAW_FIELDS,
    TIME_FIELDS,
    AbstractRenderer,
)
from botdr.utils import format_ns_interval, value_from_env

if TYPE_CHECKING:
    from botdr.clocks import StageClock
    from botdr.data import AggregateStats

logger = logging.getLogger("botdr.renderers")

FORMATS = {
    "short": "[{name}] {mean} count={count}",
    "long": "[{name}] {mean} ({std} std) min={min} max={max} count={count} last={last}",
}


@dataclass
class StageLineFormat:
    """A format string, its keys sorted by how they are filled in."""

    template: str
    max_terms: int = 2
    durations: List[str] = field(default_factory=list)
    counts: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    @classmethod
    def parse(cls, template: str, max_terms: int = 2) -> "StageLineFormat":
        parsed = cls(FORMATS.get(template, template), max_terms)
        groups = (
            (TIME_FIELDS, parsed.durations),
            (RAW_FIELDS, parsed.counts),
            (CONSTANT_FIELDS, parsed.labels),
        )
        for _, key, _, _ in Formatter().parse(parsed.template):
            if key is None:
                continue
            for table, bucket in groups:
                if key in table:
                    bucket.append(key)
                    break
            else:
                raise ValueError(f"Field {key} unknown in format string")
        return parsed

    def line(self, times: "AggregateStats") -> str:
        values: Dict[str, str] = {}
        for key in self.durations:
            values[key] = format_ns_interval(
                TIME_FIELDS[key](times), max_terms=self.max_terms
            )
        for key in self.counts:
            values[key] = str(RAW_FIELDS[key](times))
        for key in self.labels:
            values[key] = CONSTANT_FIELDS[key](times)
        return self.template.format(**values)


class StandardRenderer(AbstractRenderer):
    """One line per stage on a text stream, stderr unless ``out`` is given.

    ``format`` is a format string or one of the names in ``FORMATS``; it
    defaults to ``BOTDR_TIMING_FORMAT``, then ``short``.
    """

    def __init__(
        self,
        format: Optional[str] = None,
        out: Optional[TextIO] = None,
        max_terms: int = 2,
    ) -> None:
        self._out = out
        self._max_terms = max_terms
        self.set_format(format or value_from_env("BOTDR_TIMING_FORMAT", "short"))

    def set_format(self, format: str) -> None:
        self._format = StageLineFormat.parse(format, self._max_terms)

    def render(self, clock: "StageClock") -> None:
        lines = [self._format.line(times) for times in clock.times.values()]
        if not lines:
            return
        logger.debug("rendering %d stages", len(lines))
        out = self._out or sys.stderr
        out.write("\n".join(lines) + "\n")
        out.flush()
