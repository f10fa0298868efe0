import math

import pytest

from botdr.clocks import StageClock
from botdr.data import AggregateStats


def test_stage_incremental(incremental_timer):
    clock = StageClock(timer=incremental_timer)
    clock.tick("plan")
    v = clock.tock("plan")
    assert v == 1
    clock.tick("simulate")
    clock.tick("retrieve")
    assert clock.tock("simulate") == 2
    assert clock.tock("retrieve") == 2

    plan = clock.times["plan"]
    assert plan.mean == 1
    assert plan.std == 0
    assert plan.count == 1
    assert plan.last == 1
    assert clock.times["simulate"].mean == 2


def test_stage_constant(constant_timer):
    clock = StageClock(timer=constant_timer)
    for _ in range(10):
        with clock.stage("retrieve"):
            pass

    times = clock.times["retrieve"]
    assert times.mean == 0
    assert times.std == 0
    assert times.min == 0
    assert times.max == 0
    assert times.last == 0
    assert times.count == 10
    assert clock.durations_ns() == {"retrieve": 0}


def test_stage_context_records_on_error(incremental_timer):
    clock = StageClock(timer=incremental_timer)
    with pytest.raises(RuntimeError):
        with clock.stage("calibrate"):
            raise RuntimeError("boom")
    assert clock.times["calibrate"].count == 1


def test_durations_are_totals(incremental_timer):
    clock = StageClock(timer=incremental_timer)
    for _ in range(3):
        clock.tick("simulate")
        clock.tock("simulate")
    assert clock.durations_ns()["simulate"] == pytest.approx(3)


def test_clock_no_tick():
    clock = StageClock()
    with pytest.raises(ValueError):
        clock.tock("never")


def test_clock_disabled(incremental_timer):
    clock = StageClock(timer=incremental_timer, enabled=False)
    assert not clock.is_enabled()
    clock.tick("plan")
    assert clock.tock("plan") is None
    assert clock.times == {}

    clock.enable()
    assert clock.is_enabled()
    with clock.stage("plan"):
        pass
    assert clock.times["plan"].count == 1

    clock.disable()
    assert not clock.is_enabled()


@pytest.mark.parametrize("value, enabled", [("1", False), ("false", True)])
def test_clock_disabled_from_env(monkeypatch, value, enabled):
    monkeypatch.setenv("BOTDR_DISABLE_TIMING", value)
    assert StageClock().is_enabled() is enabled


def test_aggregate_stats():
    stats = AggregateStats(name="x")
    for v in [1.0, 2.0, 3.0, 4.0]:
        stats.update(v)
    assert stats.count == 4
    assert stats.mean == pytest.approx(2.5)
    assert stats.std == pytest.approx(math.sqrt(5 / 3))
    assert stats.min == 1.0
    assert stats.max == 4.0
    assert stats.last == 4.0
    assert stats.rms == pytest.approx(math.sqrt(7.5))
    assert stats.standard_error == pytest.approx(math.sqrt(5 / 3) / 2)


def test_aggregate_stats_empty():
    stats = AggregateStats()
    assert math.isnan(stats.rms)
    assert math.isnan(stats.standard_error)
