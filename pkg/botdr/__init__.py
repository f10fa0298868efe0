# flake8: noqa: F401
__version__ = "0.1.0"

from botdr.calibration import Branch, HysteresisMap, PztModel, calibrate
from botdr.clocks import StageClock
from botdr.config import ExperimentConfig, dump_config, load_config, parse_config
from botdr.core_model import (
    BrillouinLine,
    Environment,
    FpiEtalon,
    LineKind,
    SensitivityModel,
)
from botdr.errors import BotdrError
from botdr.retrieval import RetrievalSettings, retrieve_profile
from botdr.scan_engine import (
    FiberProfile,
    FiberSegment,
    InstrumentConfig,
    ScanSchedule,
    simulate_histogram,
)
