"""File formats: CSV for traces, histograms and profiles, TOML for maps,
summaries and run manifests.

CSV files start with ``# key: value`` comment lines (schema version first)
followed by a header row; UTF-8, LF line endings, floats written with
``repr`` so a read-write cycle is lossless.
"""
import csv
import logging
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, TextIO, Tuple, Union

import numpy as np
import tomli_w

from botdr.calibration import Branch, BranchFit, CalibrationTrace, HysteresisMap
from botdr.core_model import LineKind
from botdr.errors import BranchMismatch, ParseError
from botdr.retrieval import ProfileRow, RetrievedProfile, format_flags, parse_flags
from botdr.scan_engine import ScanHistogram
from botdr.summary import RoundtripSummary

logger = logging.getLogger("botdr.io")

PathLike = Union[str, Path]

TRACE_SCHEMA = "botdr-trace/1"
HISTOGRAM_SCHEMA = "botdr-histogram/1"
PROFILE_SCHEMA = "botdr-profile/1"
HYSTERESIS_SCHEMA = "botdr-hysteresis/1"
SUMMARY_SCHEMA = "botdr-summary/1"
MANIFEST_SCHEMA = "botdr-manifest/1"

HISTOGRAM_COLUMNS = ["step_index", "frequency_mhz", "bin_index", "range_m", "counts"]
TRACE_COLUMNS = ["voltage_v", "power"]
PROFILE_COLUMNS = [
    "bin_index",
    "range_m",
    "amplitude",
    "nu_b_mhz",
    "sigma_nu_mhz",
    "omega_b_mhz",
    "sigma_omega_mhz",
    "temperature_c",
    "sigma_t_c",
    "strain_ue",
    "sigma_strain_ue",
    "flags",
]
_PROFILE_FIELDS = [
    "bin_index",
    "range_m",
    "amplitude",
    "nu_b",
    "sigma_nu",
    "omega_b",
    "sigma_omega",
    "temperature",
    "sigma_t",
    "strain",
    "sigma_strain",
]


def _num(value: Any) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_header(f: TextIO, meta: Iterable[Tuple[str, Any]]) -> None:
    for key, value in meta:
        f.write(f"# {key}: {'' if value is None else value}\n")


def _read_csv(
    path: PathLike, schema: str
) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    meta: Dict[str, str] = {}
    with open(path, encoding="utf-8", newline="") as f:
        lines = f.read().split("\n")
    body_start = len(lines)
    for n, line in enumerate(lines):
        if not line.startswith("#"):
            body_start = n
            break
        key, sep, value = line[1:].strip().partition(":")
        if not sep:
            raise ParseError("malformed header line", line=n + 1)
        meta[key.strip()] = value.strip()
    if meta.get("schema") != schema:
        raise ParseError(
            f"{path}: expected schema {schema}, found {meta.get('schema')!r}", line=1
        )
    rows = list(csv.DictReader(line for line in lines[body_start:] if line))
    return meta, rows


def _optional_int(text: str) -> Optional[int]:
    return None if text in ("", "none") else int(text)


def write_trace(
    path: PathLike, trace: CalibrationTrace, config_hash: str = "", seed: Any = None
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        _write_header(
            f,
            [
                ("schema", TRACE_SCHEMA),
                ("config_hash", config_hash),
                ("seed", seed),
                ("branch", trace.branch.value),
            ],
        )
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for v, p in zip(trace.voltages, trace.power):
            writer.writerow([_num(v), _num(p)])


def read_trace(path: PathLike, branch: Optional[Branch] = None) -> CalibrationTrace:
    meta, rows = _read_csv(path, TRACE_SCHEMA)
    recorded = Branch(meta["branch"]) if meta.get("branch") else None
    if branch is not None and recorded is not None and branch is not recorded:
        raise BranchMismatch(
            f"{path} was recorded on the {recorded.value} branch, not {branch.value}"
        )
    branch = branch or recorded
    if branch is None:
        raise ParseError(f"{path}: no branch recorded and none given", field="branch")
    try:
        voltages = [float(r["voltage_v"]) for r in rows]
        power = [float(r["power"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}", field="voltage_v") from exc
    return CalibrationTrace(
        voltages=np.array(voltages), power=np.array(power), branch=branch
    )


def write_histogram(
    path: PathLike, hist: ScanHistogram, config_hash: Optional[str] = None
) -> None:
    if config_hash is None:
        config_hash = hist.metadata.get("config_hash", "")
    ranges = hist.bin_ranges
    integer = hist.sampling == "poisson"
    with open(path, "w", encoding="utf-8", newline="") as f:
        _write_header(
            f,
            [
                ("schema", HISTOGRAM_SCHEMA),
                ("config_hash", config_hash),
                ("seed", hist.seed),
                ("branch", hist.branch.value),
                ("line", hist.line.value),
                ("bin_width_ns", _num(hist.bin_width)),
                ("group_velocity", _num(hist.group_velocity)),
                ("pulses_per_step", _num(hist.pulses_per_step)),
                ("dead_time_ns", _num(hist.dead_time)),
                ("dark_start_bin", hist.dark_start_bin),
                ("sampling", hist.sampling),
                ("step_voltages", " ".join(_num(v) for v in hist.step_voltages)),
            ],
        )
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTOGRAM_COLUMNS)
        for step in range(hist.n_steps):
            frequency = _num(hist.step_frequencies[step])
            for b in range(hist.n_bins):
                count = hist.counts[step, b]
                writer.writerow(
                    [
                        step,
                        frequency,
                        b,
                        _num(ranges[b]),
                        str(int(count)) if integer else _num(count),
                    ]
                )
    logger.debug("wrote %d x %d histogram to %s", hist.n_steps, hist.n_bins, path)


def read_histogram(path: PathLike) -> ScanHistogram:
    meta, rows = _read_csv(path, HISTOGRAM_SCHEMA)
    try:
        voltages = np.array([float(v) for v in meta["step_voltages"].split()])
        n_steps = len(voltages)
        n_bins = max(int(r["bin_index"]) for r in rows) + 1
        sampling = meta.get("sampling", "poisson")
        cast = int if sampling == "poisson" else float
        counts = np.zeros((n_steps, n_bins), dtype=np.int64 if cast is int else float)
        frequencies = np.zeros(n_steps)
        for r in rows:
            step, b = int(r["step_index"]), int(r["bin_index"])
            counts[step, b] = cast(r["counts"])
            frequencies[step] = float(r["frequency_mhz"])
        seed = _optional_int(meta.get("seed", ""))
        return ScanHistogram(
            counts=counts,
            bin_width=float(meta["bin_width_ns"]),
            step_frequencies=frequencies,
            step_voltages=voltages,
            branch=Branch(meta["branch"]),
            group_velocity=float(meta["group_velocity"]),
            pulses_per_step=float(meta["pulses_per_step"]),
            dead_time=float(meta.get("dead_time_ns", 0.0)),
            dark_start_bin=_optional_int(meta.get("dark_start_bin", "")),
            seed=seed,
            sampling=sampling,
            line=LineKind(meta.get("line", LineKind.STOKES.value)),
            metadata={"config_hash": meta.get("config_hash", "")},
        )
    except (KeyError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc


def write_hysteresis(
    path: PathLike,
    hmap: HysteresisMap,
    config_hash: str = "",
    seed: Optional[int] = None,
) -> None:
    doc: Dict[str, Any] = {"schema": HYSTERESIS_SCHEMA, "config_hash": config_hash}
    if seed is not None:
        doc["seed"] = seed
    doc.update(
        fsr=hmap.fsr,
        branches={
            branch.value: {
                "coefficients": list(fit.coefficients),
                "v_min": fit.v_min,
                "v_max": fit.v_max,
                "max_residual": fit.max_residual,
                "residuals": list(fit.residuals),
            }
            for branch, fit in sorted(hmap.branches.items(), key=lambda kv: kv[0].value)
        },
    )
    with open(path, "wb") as f:
        tomli_w.dump(doc, f)


def read_hysteresis(path: PathLike) -> HysteresisMap:
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if doc.get("schema") != HYSTERESIS_SCHEMA:
        raise ParseError(f"{path}: expected schema {HYSTERESIS_SCHEMA}", field="schema")
    try:
        branches = {
            Branch(name): BranchFit(
                coefficients=tuple(table["coefficients"]),
                v_min=float(table["v_min"]),
                v_max=float(table["v_max"]),
                residuals=tuple(table.get("residuals", ())),
            )
            for name, table in doc.get("branches", {}).items()
        }
        return HysteresisMap(fsr=float(doc["fsr"]), branches=branches)
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"{path}: {exc!r}", field="branches") from exc


def write_profile(
    path: PathLike, profile: RetrievedProfile, config_hash: str = "", seed: Any = None
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        _write_header(
            f,
            [
                ("schema", PROFILE_SCHEMA),
                ("config_hash", config_hash),
                ("seed", seed),
                ("inversion", profile.inversion),
            ],
        )
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(PROFILE_COLUMNS)
        for row in profile.rows:
            writer.writerow(
                [row.bin_index]
                + [_num(getattr(row, name)) for name in _PROFILE_FIELDS[1:]]
                + [format_flags(row.flags)]
            )


def read_profile(path: PathLike) -> RetrievedProfile:
    meta, records = _read_csv(path, PROFILE_SCHEMA)
    rows = []
    try:
        for record in records:
            values = {
                name: float(record[column])
                for name, column in zip(_PROFILE_FIELDS[1:], PROFILE_COLUMNS[1:-1])
            }
            rows.append(
                ProfileRow(
                    bin_index=int(record["bin_index"]),
                    flags=parse_flags(record["flags"]),
                    **values,
                )
            )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: {exc!r}") from exc
    return RetrievedProfile(rows=rows, inversion=meta.get("inversion", "joint"))


def summary_to_dict(summary: RoundtripSummary) -> Dict[str, Any]:
    return {
        "accepted_bins": summary.accepted_bins,
        "flagged_bins": summary.flagged_bins,
        "segments": [
            {
                "index": s.index,
                "start_m": s.start,
                "end_m": s.end,
                "temperature_c": s.temperature,
                "strain_ue": s.strain,
                "n_bins": len(s.bins),
                "mean_temperature_c": s.temperature_hat.mean,
                "bias_temperature_c": s.temperature_error.mean,
                "rmse_temperature_c": s.temperature_error.rms,
                "mean_strain_ue": s.strain_hat.mean,
                "bias_strain_ue": s.strain_error.mean,
                "rmse_strain_ue": s.strain_error.rms,
            }
            for s in summary.segments
        ],
        "boundaries": [
            {
                "configured_m": b.configured,
                "located_m": b.located,
                "error_m": b.error,
                "quantity": b.quantity,
            }
            for b in summary.boundaries
        ],
    }


def write_summary(
    path: PathLike, summary: RoundtripSummary, config_hash: str = "", seed: Any = None
) -> None:
    doc = {
        "schema": SUMMARY_SCHEMA,
        "config_hash": config_hash,
        "seed": seed if seed is not None else "",
        **summary_to_dict(summary),
    }
    with open(path, "wb") as f:
        tomli_w.dump(doc, f)


@dataclass
class RunManifest:
    tool_version: str
    config_hash: str
    seed: int
    started: str
    finished: str = ""
    outputs: List[str] = field(default_factory=list)
    stages: Dict[str, float] = field(default_factory=dict)


def write_manifest(path: PathLike, manifest: RunManifest) -> None:
    doc = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": manifest.tool_version,
        "config_hash": manifest.config_hash,
        "seed": manifest.seed,
        "started": manifest.started,
        "finished": manifest.finished,
        "outputs": list(manifest.outputs),
        "stages": dict(manifest.stages),
    }
    with open(path, "wb") as f:
        tomli_w.dump(doc, f)


def read_manifest(path: PathLike) -> RunManifest:
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ParseError(f"{path}: expected schema {MANIFEST_SCHEMA}", field="schema")
    return RunManifest(
        tool_version=doc["tool_version"],
        config_hash=doc["config_hash"],
        seed=doc["seed"],
        started=doc["started"],
        finished=doc.get("finished", ""),
        outputs=list(doc.get("outputs", [])),
        stages=dict(doc.get("stages", {})),
    )
