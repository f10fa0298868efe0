import pytest

from botdr.calibration import PztModel
from botdr.config import ExperimentConfig
from botdr.core_model import Environment, FpiEtalon, SensitivityModel
from botdr.scan_engine import FiberProfile, FiberSegment, InstrumentConfig

CONFIGURATION_ENV_VARS = [
    "BOTDR_SEED",
    "BOTDR_WORKERS",
    "BOTDR_LOG_LEVEL",
    "BOTDR_DISABLE_TIMING",
    "BOTDR_TIMING_FORMAT",
]


@pytest.fixture(scope="function", autouse=True)
def fresh_configuration(monkeypatch):
    for v in CONFIGURATION_ENV_VARS:
        monkeypatch.delenv(v, None)
    yield
    for v in CONFIGURATION_ENV_VARS:
        monkeypatch.delenv(v, None)


@pytest.fixture(scope="function")
def incremental_timer():
    class IncrementalTimer:
        def __init__(self) -> None:
            self.count = 0

        def __call__(self) -> int:
            self.count += 1
            return self.count

    return IncrementalTimer()


@pytest.fixture(scope="function")
def constant_timer():
    class ConstantTimer:
        def __init__(self, v: int = 1) -> None:
            self.v = v

        def __call__(self) -> int:
            return self.v

    return ConstantTimer()


@pytest.fixture
def etalon():
    return FpiEtalon()


@pytest.fixture
def sensitivity():
    return SensitivityModel()


@pytest.fixture
def pzt():
    return PztModel()


@pytest.fixture
def model_map(pzt, etalon):
    return pzt.to_map(etalon.fsr)


@pytest.fixture
def short_fiber():
    """300 m hot and strained, then 600 m at rest."""
    return FiberProfile(
        segments=(
            FiberSegment(300.0, Environment(32.6, 2000.0)),
            FiberSegment(600.0, Environment(24.4, 0.0)),
        )
    )


@pytest.fixture
def fast_instrument():
    # 100 kHz keeps the histogram small: 34 bins of 30 m, 1000 m unambiguous
    return InstrumentConfig(rep_rate=100.0)


@pytest.fixture
def small_config(short_fiber, fast_instrument):
    return ExperimentConfig(instrument=fast_instrument, fiber=short_fiber, seed=7)
