"""``botdr`` command line: one subcommand per pipeline stage.

Exit status is 0 on success, 2 for configuration errors and 3 for any other
failure; failures also print a one-line JSON record on stderr.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple

from botdr import __version__
from botdr.calibration import Branch, HysteresisMap, calibrate
from botdr.clocks import StageClock
from botdr.config import ExperimentConfig, config_hash, load_config, workers
from botdr.errors import BotdrError, ConfigError
from botdr.io import (
    read_histogram,
    read_hysteresis,
    read_profile,
    read_trace,
    write_histogram,
    write_hysteresis,
    write_profile,
)
from botdr.pipeline import run_report, run_retrieval, run_roundtrip, run_simulation
from botdr.renderers import LoggingRenderer
from botdr.std import StandardRenderer
from botdr.utils import value_from_env

logger = logging.getLogger("botdr.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _calibrate(args: argparse.Namespace, clock: StageClock) -> None:
    cfg = load_config(args.config)
    trace = read_trace(args.trace, Branch(args.branch))
    out = Path(args.out)
    base: Optional[HysteresisMap] = None
    if out.exists():
        base = read_hysteresis(out)
        logger.info("merging into existing map %s", out)
    with clock.stage("calibrate"):
        hmap = calibrate(
            [trace], cfg.etalon.fsr, cfg.calibration.min_prominence, base=base
        )
    write_hysteresis(out, hmap, config_hash(cfg), cfg.seed)
    for branch, fit in sorted(hmap.branches.items(), key=lambda kv: kv[0].value):
        print(
            f"{branch.value}: {len(fit.residuals)} orders, "
            f"{fit.v_min:.3f}-{fit.v_max:.3f} V, "
            f"max residual {fit.max_residual:.3f} MHz"
        )


def _hysteresis(cfg: ExperimentConfig, path: Optional[str]) -> HysteresisMap:
    if path is None:
        return cfg.pzt.to_map(cfg.etalon.fsr)
    return read_hysteresis(path)


def _simulate(args: argparse.Namespace, clock: StageClock) -> None:
    cfg = load_config(args.config)
    hmap = _hysteresis(cfg, args.cal)
    _, hist = run_simulation(cfg, hmap, clock, args.workers)
    write_histogram(args.out, hist)


def _retrieve(args: argparse.Namespace, clock: StageClock) -> None:
    cfg = load_config(args.config)
    hist = read_histogram(args.hist)
    hmap = read_hysteresis(args.cal)
    profile = run_retrieval(cfg, hist, hmap, clock, args.workers)
    write_profile(args.out, profile, config_hash(cfg), cfg.seed)
    flagged = len(profile.rows) - len(profile.accepted())
    if flagged:
        logger.warning("%d of %d bins flagged", flagged, len(profile.rows))


def _roundtrip(args: argparse.Namespace, clock: StageClock) -> None:
    cfg = load_config(args.config)
    manifest, summary = run_roundtrip(cfg, args.out_dir, clock, args.workers)
    for segment in summary.segments:
        print(
            f"segment {segment.index}: {segment.start:g}-{segment.end:g} m, "
            f"T {segment.temperature:g} C -> {segment.temperature_hat.mean:.3f} C, "
            f"strain {segment.strain:g} ue -> {segment.strain_hat.mean:.1f} ue"
        )
    for boundary in summary.boundaries:
        print(
            f"boundary {boundary.configured:g} m located at "
            f"{boundary.located:.1f} m ({boundary.quantity})"
        )
    print(f"{len(manifest.outputs)} files written to {args.out_dir}")


def _report(args: argparse.Namespace, clock: StageClock) -> None:
    cfg = load_config(args.config)
    profile = read_profile(args.profile)
    hist = read_histogram(args.hist) if args.hist else None
    hmap = read_hysteresis(args.cal) if args.cal else None
    if args.bins:
        missing = sorted(set(args.bins) - {row.bin_index for row in profile.rows})
        if missing:
            raise ConfigError(f"bins {missing} are not in {args.profile}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = run_report(
        cfg,
        profile,
        out,
        clock,
        hist=hist,
        hmap=hmap,
        bins=args.bins,
        config_digest=config_hash(cfg) if args.config else "",
    )
    for path in paths:
        print(path)


COMMANDS: Dict[str, Callable[[argparse.Namespace, StageClock], None]] = {
    "calibrate": _calibrate,
    "simulate": _simulate,
    "retrieve": _retrieve,
    "roundtrip": _roundtrip,
    "report": _report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="botdr",
        description="Photon-counting Brillouin reflectometer simulator and "
        "retrieval pipeline.",
    )
    p.add_argument("--version", action="version", version=f"botdr {__version__}")
    p.add_argument(
        "--log-level",
        default=value_from_env("BOTDR_LOG_LEVEL", "WARNING"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        type=str.upper,
    )
    p.add_argument(
        "--timings", action="store_true", help="print stage durations to stderr"
    )
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="parallel workers (default: BOTDR_WORKERS or 1)",
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="trace CSV -> hysteresis TOML")
    c.add_argument("--trace", required=True)
    c.add_argument("--branch", required=True, choices=[b.value for b in Branch])
    c.add_argument("--out", required=True, help="created, or merged into")
    c.add_argument("--config", default=None)

    s = sub.add_parser("simulate", help="config -> histogram CSV")
    s.add_argument("--config", default=None)
    s.add_argument("--out", required=True)
    s.add_argument("--cal", default=None, help="plan on this map, not the model's")

    r = sub.add_parser("retrieve", help="histogram + hysteresis -> profile CSV")
    r.add_argument("--hist", required=True)
    r.add_argument("--cal", required=True)
    r.add_argument("--config", default=None)
    r.add_argument("--out", required=True)

    t = sub.add_parser("roundtrip", help="every stage end to end")
    t.add_argument("--config", default=None)
    t.add_argument("--out-dir", required=True)

    o = sub.add_parser("report", help="profile CSV -> SVG plots")
    o.add_argument("--profile", required=True)
    o.add_argument("--out", required=True, help="output directory")
    o.add_argument("--hist", default=None)
    o.add_argument("--cal", default=None)
    o.add_argument("--config", default=None)
    o.add_argument("--bins", type=int, nargs="+", default=None)
    return p


def _error_record(exc: BaseException, command: str) -> str:
    return json.dumps(
        {"error": type(exc).__name__, "message": str(exc), "subcommand": command}
    )


def run_subcommand(
    args: argparse.Namespace, clock: StageClock
) -> Tuple[int, Optional[Exception]]:
    """Run ``args.command`` and map a failure to its exit status."""
    try:
        if args.workers is None:
            args.workers = workers()
        elif args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        COMMANDS[args.command](args, clock)
    except ConfigError as exc:
        return EXIT_CONFIG, exc
    except (BotdrError, OSError) as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        return EXIT_RUNTIME, exc
    return EXIT_OK, None


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    clock = StageClock()
    code, failure = run_subcommand(args, clock)
    clock.render(LoggingRenderer(logger, level="DEBUG"))
    if args.timings:
        clock.render(StandardRenderer())
    # the error record stays the last line on stderr
    if failure is not None:
        sys.stderr.write(_error_record(failure, args.command) + "\n")
    return code
