from typing import Any, Optional


class BotdrError(Exception):
    pass


class ConfigError(BotdrError):
    pass


class ParseError(ConfigError):
    def __init__(
        self, message: str, line: Optional[int] = None, field: Optional[str] = None
    ) -> None:
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class ValidationError(ConfigError, ValueError):
    def __init__(self, field: str, message: str = "") -> None:
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if message else field)


class NonPhysicalWidth(BotdrError):
    pass


class IllConditioned(BotdrError):
    pass


class OutOfRange(BotdrError):
    pass


class CalibrationError(BotdrError):
    pass


class TooFewPeaks(CalibrationError):
    pass


class InsufficientPoints(CalibrationError):
    pass


class NonMonotone(CalibrationError):
    pass


class OutOfCalibratedRange(CalibrationError):
    pass


class BranchMismatch(CalibrationError):
    pass


class RetrievalError(BotdrError):
    pass


class NoDarkRegion(RetrievalError):
    pass


class DegenerateSpectrum(RetrievalError):
    pass


class NotConverged(RetrievalError):
    def __init__(self, message: str, fit: Any = None) -> None:
        self.fit = fit
        super().__init__(message)
