import io
import logging

import pytest

from botdr.clocks import StageClock
from botdr.renderers import LoggingRenderer
from botdr.std import StandardRenderer


def _run(clock: StageClock, stages=("calibrate", "retrieve"), repeat: int = 10):
    for _ in range(repeat):
        for stage in stages:
            with clock.stage(stage):
                pass
    return clock


def test_stream_rendering(incremental_timer):
    out = io.StringIO()
    clock = _run(StageClock(timer=incremental_timer))
    clock.render(StandardRenderer(out=out))
    assert out.getvalue() == (
        "[calibrate] 1ns count=10\n" "[retrieve] 1ns count=10\n"
    )


def test_stream_rendering_long(incremental_timer):
    out = io.StringIO()
    clock = _run(StageClock(timer=incremental_timer), stages=("simulate",))
    clock.render(StandardRenderer(format="long", out=out))
    assert out.getvalue() == (
        "[simulate] 1ns (0ns std) min=1ns max=1ns count=10 last=1ns\n"
    )


def test_stream_rendering_custom(incremental_timer):
    out = io.StringIO()
    clock = _run(StageClock(timer=incremental_timer), stages=("report",), repeat=3)
    renderer = StandardRenderer(out=out)
    renderer.set_format("{name}: {total} over {count}")
    clock.render(renderer)
    assert out.getvalue() == "report: 3ns over 3\n"


def test_format_from_env(monkeypatch, constant_timer):
    monkeypatch.setenv("BOTDR_TIMING_FORMAT", "{name}={last}")
    out = io.StringIO()
    clock = _run(StageClock(timer=constant_timer), stages=("plan",), repeat=1)
    clock.render(StandardRenderer(out=out))
    assert out.getvalue() == "plan=0ns\n"


def test_empty_clock_renders_nothing():
    out = io.StringIO()
    StageClock().render(StandardRenderer(out=out))
    assert out.getvalue() == ""


def test_set_format_unknown_field():
    renderer = StandardRenderer(out=io.StringIO())
    with pytest.raises(ValueError):
        renderer.set_format("{name} {median}")


def test_log_rendering(caplog, incremental_timer):
    clock = _run(StageClock(timer=incremental_timer), stages=("retrieve",), repeat=2)
    with caplog.at_level(logging.INFO):
        clock.render(LoggingRenderer(level="DEBUG"))
    assert len(caplog.records) == 0

    with caplog.at_level(logging.DEBUG):
        clock.render(LoggingRenderer(level="DEBUG"))
    assert len(caplog.records) == 1
    record = caplog.records[0]
    assert record.stage == "retrieve"
    assert record.mean == pytest.approx(1e-9)
    assert record.count == 2
    for key in ("std", "min", "max"):
        assert hasattr(record, key)

    with caplog.at_level(logging.DEBUG):
        with pytest.raises(TypeError):
            # standard loggers do not accept extra fields as keyword arguments
            clock.render(LoggingRenderer(level="DEBUG", extra_as_kwargs=True))
