import math
from dataclasses import dataclass


@dataclass
class AggregateStats:
    """Running mean/std/min/max of a stream of values (Welford update)."""

    name: str = ""
    count: int = 0
    mean: float = 0.0
    std: float = 0.0
    min: float = math.inf
    max: float = -math.inf
    last: float = math.nan
    _m2: float = 0.0

    def update(self, value: float) -> None:
        value = float(value)
        self.last = value

        self.count += 1
        self.max = max(value, self.max)
        self.min = min(value, self.min)

        delta = value - self.mean
        self.mean += delta / self.count

        delta2 = value - self.mean
        self._m2 += delta * delta2

        if self.count >= 2:
            self.std = math.sqrt(self._m2 / (self.count - 1))

    @property
    def rms(self) -> float:
        # root of the mean square about zero
        if not self.count:
            return math.nan
        return math.sqrt(self.mean**2 + self._m2 / self.count)

    @property
    def standard_error(self) -> float:
        if self.count < 2:
            return math.nan
        return self.std / math.sqrt(self.count)
