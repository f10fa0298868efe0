"""Experiment configuration: TOML in, validated dataclasses out, and back.

Every section is optional; omitted keys take the dataclass defaults, which
reproduce the reference instrument. Unknown keys are rejected so typos do
not silently fall back to a default.
"""
import dataclasses
import hashlib
import logging
import re
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar, Union

import tomli_w

from botdr.calibration import Branch, PztModel
from botdr.core_model import Environment, FpiEtalon, LineKind, SensitivityModel
from botdr.errors import ParseError, ValidationError
from botdr.retrieval import RetrievalSettings
from botdr.scan_engine import (
    SAMPLING_MODES,
    FiberProfile,
    FiberSegment,
    InstrumentConfig,
)
from botdr.utils import value_from_env

logger = logging.getLogger("botdr.config")

T = TypeVar("T")

NOISE_MODELS = ("multiplicative", "additive")


@dataclass(frozen=True)
class ScheduleConfig:
    branch: Branch = Branch.UP
    n_steps: int = 40
    freq_step: float = 15.0
    dwell: float = 1.0
    start_frequency: Optional[float] = None
    calibrated_start: float = 1000.0

    def __post_init__(self) -> None:
        if not isinstance(self.branch, Branch):
            object.__setattr__(self, "branch", Branch(self.branch))
        if self.n_steps < 3:
            raise ValidationError("n_steps", "at least 3 scan steps are required")
        if not self.freq_step > 0:
            raise ValidationError("freq_step", "must be > 0")
        if not self.dwell > 0:
            raise ValidationError("dwell", "must be > 0")

    def start_for(self, sensitivity: SensitivityModel) -> float:
        """Absolute first-step frequency, centred on ``nu_ref`` when unset."""
        if self.start_frequency is not None:
            return self.start_frequency
        return sensitivity.nu_ref - (self.n_steps - 1) * self.freq_step / 2


@dataclass(frozen=True)
class CalibrationSettings:
    n_samples: int = 20000
    noise: float = 0.002
    noise_model: str = "multiplicative"
    min_prominence: float = 0.5
    use_model_map: bool = False

    def __post_init__(self) -> None:
        if self.n_samples < 100:
            raise ValidationError("n_samples", "must be >= 100")
        if not self.noise >= 0:
            raise ValidationError("noise", "must be >= 0")
        if self.noise_model not in NOISE_MODELS:
            raise ValidationError("noise_model", f"one of {NOISE_MODELS}")
        if not 0 < self.min_prominence < 1:
            raise ValidationError("min_prominence", "must be in (0, 1)")


def default_fiber() -> FiberProfile:
    return FiberProfile(
        segments=(
            FiberSegment(3000.0, Environment(19.7, 0.0)),
            FiberSegment(9100.0, Environment(24.4, 0.0)),
        )
    )


@dataclass(frozen=True)
class ExperimentConfig:
    instrument: InstrumentConfig = InstrumentConfig()
    fiber: FiberProfile = field(default_factory=default_fiber)
    sensitivity: SensitivityModel = SensitivityModel()
    etalon: FpiEtalon = FpiEtalon()
    schedule: ScheduleConfig = ScheduleConfig()
    pzt: PztModel = PztModel()
    calibration: CalibrationSettings = CalibrationSettings()
    retrieval: RetrievalSettings = RetrievalSettings()
    seed: int = 1
    output_dir: str = "botdr-out"
    sampling: str = "poisson"

    def __post_init__(self) -> None:
        if self.sampling not in SAMPLING_MODES:
            raise ValidationError("sampling", f"one of {SAMPLING_MODES}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ValidationError("seed", "must be an integer")
        if self.seed < 0:
            raise ValidationError("seed", "must be >= 0")


def _init_fields(cls: type) -> List[str]:
    return [f.name for f in dataclasses.fields(cls) if f.init]


def _build(cls: Type[T], table: Any, section: str) -> T:
    if not isinstance(table, dict):
        raise ValidationError(section, "expected a table")
    unknown = sorted(set(table) - set(_init_fields(cls)))
    if unknown:
        raise ValidationError(f"{section}.{unknown[0]}", "unknown key")
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(section, str(exc)) from exc


def _build_fiber(table: Any) -> FiberProfile:
    if not isinstance(table, dict):
        raise ValidationError("fiber", "expected a table")
    unknown = sorted(set(table) - {"segments"})
    if unknown:
        raise ValidationError(f"fiber.{unknown[0]}", "unknown key")
    entries = table.get("segments", [])
    if not isinstance(entries, list):
        raise ValidationError("fiber.segments", "expected an array of tables")
    segments = []
    for entry in entries:
        if not isinstance(entry, dict):
            raise ValidationError("fiber.segments", f"expected a table, got {entry!r}")
        entry = dict(entry)
        try:
            env = Environment(
                temperature=entry.pop("temperature", 20.0),
                strain=entry.pop("strain", 0.0),
            )
        except ValidationError as exc:
            raise ValidationError(f"fiber.segments.{exc.field}", exc.message) from exc
        if "length" not in entry:
            raise ValidationError("fiber.segments.length", "required")
        segments.append(_build(_SegmentFields, entry, "fiber.segments").to(env))
    return FiberProfile(segments=tuple(segments))


@dataclass(frozen=True)
class _SegmentFields:
    length: float
    attenuation: float = 0.2
    amplitude: float = 1.0

    def to(self, env: Environment) -> FiberSegment:
        return FiberSegment(self.length, env, self.attenuation, self.amplitude)


def _retrieval_table(table: Dict[str, Any]) -> Dict[str, Any]:
    if "workers" in table:
        raise ValidationError("retrieval.workers", "set BOTDR_WORKERS instead")
    if "dark_region" in table:
        region = table["dark_region"]
        if not isinstance(region, list) or len(region) != 2:
            raise ValidationError("retrieval.dark_region", "expected [start, stop]")
        table = {**table, "dark_region": tuple(region)}
    return table


_LINE = re.compile(r"line (\d+)")


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = _LINE.search(str(exc))
        line = int(match.group(1)) if match else None
        raise ParseError(str(exc), line=line) from exc

    sections: Dict[str, Tuple[type, str]] = {
        "instrument": (InstrumentConfig, "instrument"),
        "sensitivity": (SensitivityModel, "sensitivity"),
        "etalon": (FpiEtalon, "etalon"),
        "schedule": (ScheduleConfig, "schedule"),
        "calibration": (CalibrationSettings, "calibration"),
        "retrieval": (RetrievalSettings, "retrieval"),
    }
    kwargs: Dict[str, Any] = {}
    for key, value in doc.items():
        if key in sections:
            cls, name = sections[key]
            if cls is RetrievalSettings and isinstance(value, dict):
                value = _retrieval_table(value)
            kwargs[key] = _build(cls, value, name)
        elif key == "pzt":
            if isinstance(value, dict) and "up" in value:
                value = {**value, "up": tuple(value["up"])}
            kwargs[key] = _build(PztModel, value, "pzt")
        elif key == "fiber":
            kwargs[key] = _build_fiber(value)
        elif key in ("seed", "output_dir", "sampling"):
            kwargs[key] = value
        else:
            raise ValidationError(key, "unknown key")
    return ExperimentConfig(**kwargs)


def apply_env_overrides(cfg: ExperimentConfig) -> ExperimentConfig:
    seed = value_from_env("BOTDR_SEED", cfg.seed)
    if seed != cfg.seed:
        logger.info("seed %d overridden by BOTDR_SEED=%d", cfg.seed, seed)
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def load_config(path: Union[str, Path, None]) -> ExperimentConfig:
    """Load ``path`` (``None`` for all defaults) and apply ``BOTDR_SEED``."""
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    cfg = parse_config(text)
    return apply_env_overrides(cfg)


def workers() -> int:
    count = value_from_env("BOTDR_WORKERS", 1)
    if count < 1:
        raise ValidationError("BOTDR_WORKERS", "must be >= 1")
    return count


def _plain(value: Any) -> Any:
    if isinstance(value, (Branch, LineKind)):
        return value.value
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def _table(obj: Any, skip: Tuple[str, ...] = ()) -> Dict[str, Any]:
    return {
        name: _plain(getattr(obj, name))
        for name in _init_fields(type(obj))
        if name not in skip and getattr(obj, name) is not None
    }


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return {
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "sampling": cfg.sampling,
        "instrument": _table(cfg.instrument),
        "etalon": _table(cfg.etalon),
        "sensitivity": _table(cfg.sensitivity),
        "schedule": _table(cfg.schedule),
        "pzt": _table(cfg.pzt),
        "calibration": _table(cfg.calibration),
        "retrieval": _table(cfg.retrieval, skip=("workers",)),
        "fiber": {
            "segments": [
                {
                    "length": s.length,
                    "temperature": s.environment.temperature,
                    "strain": s.environment.strain,
                    "attenuation": s.attenuation,
                    "amplitude": s.amplitude,
                }
                for s in cfg.fiber.segments
            ]
        },
    }


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()
