import pytest

from botdr.calibration import Branch
from botdr.config import (
    ExperimentConfig,
    ScheduleConfig,
    config_hash,
    dump_config,
    load_config,
    parse_config,
    workers,
)
from botdr.core_model import SensitivityModel
from botdr.errors import ConfigError, ParseError, ValidationError
from botdr.retrieval import RetrievalSettings


def test_empty_config_gives_defaults():
    cfg = parse_config("")
    assert cfg == ExperimentConfig()
    assert cfg.instrument.pulse_duration == 300.0
    assert cfg.instrument.rep_rate == 8.0
    assert cfg.etalon.fsr == 4020.0
    assert cfg.seed == 1
    assert cfg.sampling == "poisson"
    assert cfg.fiber.total_length == 12100.0
    assert [s.environment.temperature for s in cfg.fiber.segments] == [19.7, 24.4]


def test_load_config_without_file():
    assert load_config(None) == ExperimentConfig()


def test_load_config_file(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "seed = 11\n"
        "[instrument]\n"
        "rep_rate = 100.0\n"
        "[[fiber.segments]]\n"
        "length = 300.0\n"
        "temperature = 32.6\n"
        "strain = 2000.0\n"
        "[[fiber.segments]]\n"
        "length = 600.0\n"
        "temperature = 24.4\n"
        "[schedule]\n"
        'branch = "down"\n'
        "[retrieval]\n"
        'inversion = "temperature"\n'
        "dark_region = [31, 34]\n",
        encoding="utf-8",
    )
    cfg = load_config(path)
    assert cfg.seed == 11
    assert cfg.instrument.rep_rate == 100.0
    assert cfg.fiber.total_length == 900.0
    assert cfg.fiber.segments[0].environment.strain == 2000.0
    assert cfg.fiber.segments[1].environment.strain == 0.0
    assert cfg.schedule.branch is Branch.DOWN
    assert cfg.retrieval.dark_region == (31, 34)


@pytest.mark.parametrize(
    "text, field",
    [
        ("[instrument]\npulse_duration = -300.0\n", "pulse_duration"),
        ("[etalon]\nomega_fpi = 3000.0\n", "omega_fpi"),
        ("[schedule]\nn_steps = 2\n", "n_steps"),
        ("[calibration]\nnoise_model = 'pink'\n", "noise_model"),
        ("[retrieval]\nweighting = 'huber'\n", "weighting"),
        ("[retrieval]\nworkers = 4\n", "retrieval.workers"),
        ("[instrument]\npulse_width = 300.0\n", "instrument.pulse_width"),
        ("colour = 'blue'\n", "colour"),
        ("sampling = 'exact'\n", "sampling"),
        ("seed = -1\n", "seed"),
        ("seed = 1.5\n", "seed"),
        ("[[fiber.segments]]\ntemperature = 20.0\n", "fiber.segments.length"),
        (
            "[[fiber.segments]]\nlength = 100.0\nlocation = 'lab'\n",
            "fiber.segments.location",
        ),
        ("instrument = 3\n", "instrument"),
        ("[fiber]\nsegments = [1, 2]\n", "fiber.segments"),
        ("[fiber]\nsegments = 5\n", "fiber.segments"),
        (
            "[[fiber.segments]]\nlength = 100.0\ntemperature = 'hot'\n",
            "fiber.segments.temperature",
        ),
        (
            "[[fiber.segments]]\nlength = 100.0\nstrain = inf\n",
            "fiber.segments.strain",
        ),
        (
            "[[fiber.segments]]\nlength = 100.0\ntemperature = true\n",
            "fiber.segments.temperature",
        ),
        ("[retrieval]\nassumed_strain = nan\n", "assumed_strain"),
        ("[retrieval]\ndark_region = 5\n", "retrieval.dark_region"),
        ("[retrieval]\nreference_strain = 0.0\n", "reference_strain"),
        (
            "[retrieval]\nreference_temperature = [[0.0, 300.0]]\n",
            "reference_temperature",
        ),
        (
            "[retrieval]\nreference_temperature = [[300.0, 0.0, 24.4]]\n",
            "reference_temperature",
        ),
        (
            "[retrieval]\n"
            "reference_strain = [[0.0, 300.0, 1.0], [200.0, 400.0, 0.0]]\n",
            "reference_strain",
        ),
    ],
)
def test_validation_errors(text, field):
    with pytest.raises(ValidationError) as info:
        parse_config(text)
    assert info.value.field == field
    assert isinstance(info.value, ConfigError)


def test_parse_error_reports_line():
    with pytest.raises(ParseError) as info:
        parse_config("seed = 1\n[instrument\nrep_rate = 8.0\n")
    assert info.value.line == 2
    assert "line 2" in str(info.value)


def test_dump_parse_identity(small_config):
    cfg = ExperimentConfig(
        instrument=small_config.instrument,
        fiber=small_config.fiber,
        sensitivity=SensitivityModel(c_nu_e=0.048),
        schedule=ScheduleConfig(branch=Branch.DOWN, start_frequency=10600.0),
        retrieval=RetrievalSettings(
            inversion="strain",
            reference_temperature=((0.0, 300.0, 32.6), (300.0, 900.0, 24.4)),
            dark_region=(31, 34),
        ),
        seed=small_config.seed,
        sampling="expected",
    )
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert dump_config(parse_config(text)) == text


def test_config_hash(small_config):
    digest = config_hash(small_config)
    assert len(digest) == 64
    assert config_hash(parse_config(dump_config(small_config))) == digest
    other = ExperimentConfig(
        instrument=small_config.instrument, fiber=small_config.fiber, seed=8
    )
    assert config_hash(other) != digest


def test_workers_are_not_part_of_the_config(small_config):
    assert "workers" not in dump_config(small_config)


def test_seed_from_environment(monkeypatch, tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("seed = 3\n", encoding="utf-8")
    monkeypatch.setenv("BOTDR_SEED", "42")
    assert load_config(path).seed == 42
    assert parse_config("seed = 3\n").seed == 3


def test_workers_from_environment(monkeypatch):
    assert workers() == 1
    monkeypatch.setenv("BOTDR_WORKERS", "4")
    assert workers() == 4
    monkeypatch.setenv("BOTDR_WORKERS", "0")
    with pytest.raises(ValidationError):
        workers()


def test_schedule_start(sensitivity):
    assert ScheduleConfig().start_for(sensitivity) == pytest.approx(10557.5)
    assert ScheduleConfig(start_frequency=10000.0).start_for(sensitivity) == 10000.0


def test_reference_tables(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "[retrieval]\n"
        'inversion = "strain"\n'
        "assumed_temperature = 24.4\n"
        "reference_temperature = [[0, 300, 32.6]]\n",
        encoding="utf-8",
    )
    settings = load_config(path).retrieval
    assert settings.reference_temperature == ((0.0, 300.0, 32.6),)
    assert settings.temperature_at(15.0) == 32.6
    assert settings.temperature_at(300.0) == 24.4
    assert settings.strain_at(15.0) == 0.0
