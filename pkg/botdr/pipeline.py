"""Experiment stages wired together from an ``ExperimentConfig``.

Each ``run_*`` function times itself on the given ``StageClock``. The
round trip writes every intermediate artifact plus a manifest into one
output directory.
"""
import dataclasses
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from botdr import __version__
from botdr.calibration import (
    Branch,
    CalibrationTrace,
    HysteresisMap,
    calibrate,
    simulate_calibration_trace,
)
from botdr.clocks import StageClock
from botdr.config import ExperimentConfig, config_hash, dump_config
from botdr.errors import BotdrError
from botdr.io import (
    RunManifest,
    write_histogram,
    write_hysteresis,
    write_manifest,
    write_profile,
    write_summary,
    write_trace,
)
from botdr.plotting import plot_hysteresis, plot_profile, plot_spectra, select_bins
from botdr.retrieval import (
    BinSpectrum,
    RetrievedProfile,
    assemble_spectrum,
    estimate_background,
    fit_lorentzian,
    retrieve_profile,
)
from botdr.scan_engine import (
    ScanHistogram,
    ScanSchedule,
    plan_schedule,
    simulate_histogram,
)
from botdr.summary import RoundtripSummary, summarize_roundtrip

logger = logging.getLogger("botdr.pipeline")

PathLike = Union[str, Path]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def simulate_traces(cfg: ExperimentConfig) -> List[CalibrationTrace]:
    settings = cfg.calibration
    return [
        simulate_calibration_trace(
            cfg.pzt,
            cfg.etalon,
            branch=branch,
            n_samples=settings.n_samples,
            noise=settings.noise,
            noise_model=settings.noise_model,
            seed=np.random.SeedSequence([cfg.seed, i]),
        )
        for i, branch in enumerate(Branch)
    ]


def run_calibration(
    cfg: ExperimentConfig, clock: Optional[StageClock] = None
) -> Tuple[HysteresisMap, List[CalibrationTrace]]:
    clock = clock or StageClock()
    with clock.stage("calibrate"):
        traces = simulate_traces(cfg)
        if cfg.calibration.use_model_map:
            hmap = cfg.pzt.to_map(cfg.etalon.fsr)
        else:
            hmap = calibrate(traces, cfg.etalon.fsr, cfg.calibration.min_prominence)
    return hmap, traces


def plan(cfg: ExperimentConfig, hmap: HysteresisMap) -> ScanSchedule:
    s = cfg.schedule
    return plan_schedule(
        hmap,
        branch=s.branch,
        n_steps=s.n_steps,
        freq_step=s.freq_step,
        dwell=s.dwell,
        start_frequency=s.start_for(cfg.sensitivity),
        calibrated_start=s.calibrated_start,
    )


def schedule_from_histogram(cfg: ExperimentConfig, hist: ScanHistogram) -> ScanSchedule:
    s = cfg.schedule
    return ScanSchedule(
        voltages=tuple(hist.step_voltages),
        branch=hist.branch,
        freq_step=s.freq_step,
        dwell=hist.pulses_per_step / (cfg.instrument.rep_rate * 1e3),
        start_frequency=s.start_for(cfg.sensitivity),
        calibrated_start=s.calibrated_start,
    )


def run_simulation(
    cfg: ExperimentConfig,
    hmap: HysteresisMap,
    clock: Optional[StageClock] = None,
    workers: int = 1,
) -> Tuple[ScanSchedule, ScanHistogram]:
    """Plan the scan on ``hmap`` and simulate it on the true PZT response."""
    clock = clock or StageClock()
    with clock.stage("plan"):
        schedule = plan(cfg, hmap)
    with clock.stage("simulate"):
        hist = simulate_histogram(
            cfg.fiber,
            cfg.instrument,
            cfg.sensitivity,
            cfg.etalon,
            schedule,
            cfg.pzt.to_map(cfg.etalon.fsr),
            seed=cfg.seed,
            sampling=cfg.sampling,
            workers=workers,
        )
    hist.metadata["config_hash"] = config_hash(cfg)
    return schedule, hist


def run_retrieval(
    cfg: ExperimentConfig,
    hist: ScanHistogram,
    hmap: HysteresisMap,
    clock: Optional[StageClock] = None,
    workers: int = 1,
) -> RetrievedProfile:
    clock = clock or StageClock()
    expected = config_hash(cfg)
    recorded = hist.metadata.get("config_hash")
    if recorded and recorded != expected:
        logger.warning(
            "histogram was simulated with config %s, retrieving with %s",
            recorded[:12],
            expected[:12],
        )
    settings = dataclasses.replace(cfg.retrieval, workers=workers)
    with clock.stage("retrieve"):
        return retrieve_profile(
            hist,
            hmap,
            schedule_from_histogram(cfg, hist),
            cfg.etalon,
            cfg.sensitivity,
            settings,
        )


def overlay_spectra(
    cfg: ExperimentConfig,
    hist: ScanHistogram,
    hmap: HysteresisMap,
    profile: RetrievedProfile,
    bins: List[int],
) -> Dict[int, BinSpectrum]:
    """Measured spectra of ``bins`` with fits attached to ``profile`` rows."""
    schedule = schedule_from_histogram(cfg, hist)
    background = None
    if cfg.retrieval.subtract_background:
        try:
            background = estimate_background(hist, cfg.retrieval.dark_region)
        except BotdrError:
            background = None
    rows = {row.bin_index: row for row in profile.rows}
    spectra = {}
    for b in bins:
        spec = assemble_spectrum(hist, hmap, schedule, b, background)
        spectra[b] = spec
        if rows[b].fit is None:
            try:
                rows[b].fit = fit_lorentzian(spec, weighting=cfg.retrieval.weighting)
            except BotdrError as exc:
                logger.warning("no fit overlay for bin %d: %s", b, exc)
    return spectra


def run_report(
    cfg: ExperimentConfig,
    profile: RetrievedProfile,
    out_dir: PathLike,
    clock: Optional[StageClock] = None,
    hist: Optional[ScanHistogram] = None,
    hmap: Optional[HysteresisMap] = None,
    bins: Optional[List[int]] = None,
    config_digest: str = "",
) -> List[Path]:
    clock = clock or StageClock()
    out_dir = Path(out_dir)
    with clock.stage("report"):
        paths = plot_profile(profile, out_dir, config_digest, cfg.seed)
        bins = bins if bins is not None else select_bins(profile)
        spectra = None
        if hist is not None and hmap is not None:
            spectra = overlay_spectra(cfg, hist, hmap, profile, bins)
        paths.append(
            plot_spectra(
                profile,
                out_dir / "spectra.svg",
                cfg.etalon,
                bins=bins,
                spectra=spectra,
                config_hash=config_digest,
                seed=cfg.seed,
            )
        )
    return paths


def run_roundtrip(
    cfg: ExperimentConfig,
    out_dir: Optional[PathLike] = None,
    clock: Optional[StageClock] = None,
    workers: int = 1,
) -> Tuple[RunManifest, RoundtripSummary]:
    clock = clock or StageClock()
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    manifest = RunManifest(
        tool_version=__version__, config_hash=digest, seed=cfg.seed, started=_now()
    )
    outputs: List[Path] = []

    config_path = out / "config.toml"
    config_path.write_text(dump_config(cfg), encoding="utf-8")
    outputs.append(config_path)

    hmap, traces = run_calibration(cfg, clock)
    for trace in traces:
        path = out / f"trace_{trace.branch.value}.csv"
        write_trace(path, trace, digest, cfg.seed)
        outputs.append(path)
    write_hysteresis(out / "hysteresis.toml", hmap, digest, cfg.seed)
    outputs.append(out / "hysteresis.toml")

    _, hist = run_simulation(cfg, hmap, clock, workers)
    write_histogram(out / "histogram.csv", hist, digest)
    outputs.append(out / "histogram.csv")

    profile = run_retrieval(cfg, hist, hmap, clock, workers)
    write_profile(out / "profile.csv", profile, digest, cfg.seed)
    outputs.append(out / "profile.csv")

    with clock.stage("summarize"):
        summary = summarize_roundtrip(cfg.fiber, cfg.instrument, profile)
    write_summary(out / "summary.toml", summary, digest, cfg.seed)
    outputs.append(out / "summary.toml")

    outputs.extend(
        run_report(cfg, profile, out, clock, hist, hmap, config_digest=digest)
    )
    outputs.append(plot_hysteresis(hmap, out / "hysteresis.svg", digest, cfg.seed))

    for segment in summary.segments:
        logger.info(
            "segment %d (%g-%g m): mean T %.3f C over %d bins",
            segment.index,
            segment.start,
            segment.end,
            segment.temperature_hat.mean,
            len(segment.bins),
        )

    manifest.finished = _now()
    manifest.outputs = sorted(p.name for p in outputs)
    manifest.stages = {
        stage: ns * 1e-9 for stage, ns in sorted(clock.durations_ns().items())
    }
    write_manifest(out / "manifest.toml", manifest)
    return manifest, summary
