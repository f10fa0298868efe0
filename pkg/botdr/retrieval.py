"""Inverse chain: histogram to per-bin Brillouin line to temperature/strain.

Each range bin yields one spectrum over the scan steps. The spectrum is
fitted with a Lorentzian plus constant offset, the interferometer width is
subtracted from the fitted half-width and the line is inverted through the
sensitivity model. A bin that cannot be fitted or inverted is kept in the
profile with NaN values and a ``QualityFlag`` saying why.
"""
import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Tuple

import numpy as np
from scipy import optimize

from botdr.calibration import HysteresisMap, voltage_to_frequency
from botdr.core_model import (
    BrillouinLine,
    FpiEtalon,
    SensitivityModel,
    environment_covariance,
    environment_from_line,
    strain_from_shift,
    temperature_from_shift,
)
from botdr.errors import (
    BranchMismatch,
    DegenerateSpectrum,
    IllConditioned,
    NoDarkRegion,
    NotConverged,
    OutOfRange,
    ValidationError,
)
from botdr.scan_engine import (
    ScanHistogram,
    ScanSchedule,
    restore_dead_time,
    time_to_range,
)

logger = logging.getLogger("botdr.retrieval")

MIN_POINTS = 8
WEIGHTINGS = ("unweighted", "poisson")
INVERSIONS = ("joint", "temperature", "strain")


class QualityFlag(enum.Flag):
    NOISE_ONLY = enum.auto()
    DEGENERATE = enum.auto()
    NOT_CONVERGED = enum.auto()
    NON_PHYSICAL = enum.auto()
    ILL_CONDITIONED = enum.auto()
    INSUFFICIENT = enum.auto()
    SATURATED = enum.auto()


OK = QualityFlag(0)


def format_flags(flags: QualityFlag) -> str:
    if not flags:
        return "ok"
    return "|".join(f.name for f in QualityFlag if f in flags)  # type: ignore


def parse_flags(text: str) -> QualityFlag:
    flags = OK
    if text.strip() in ("", "ok"):
        return flags
    for name in text.split("|"):
        flags |= QualityFlag[name.strip()]
    return flags


ReferenceTable = Tuple[Tuple[float, float, float], ...]


def _reference_table(name: str, entries: Any) -> ReferenceTable:
    """Sorted, non-overlapping ``(start_m, end_m, value)`` ranges."""
    if not isinstance(entries, (list, tuple)):
        raise ValidationError(name, "expected a list of [start_m, end_m, value]")
    table: List[Tuple[float, float, float]] = []
    for entry in entries:
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise ValidationError(name, "expected [start_m, end_m, value] entries")
        try:
            start, end, value = (float(x) for x in entry)
        except (TypeError, ValueError) as exc:
            raise ValidationError(name, "entries must be numbers") from exc
        if not all(map(math.isfinite, (start, end, value))):
            raise ValidationError(name, "must be finite")
        if not 0 <= start < end:
            raise ValidationError(name, "expected 0 <= start < end")
        if table and start < table[-1][1]:
            raise ValidationError(name, "ranges must be sorted and not overlap")
        table.append((start, end, value))
    return tuple(table)


def _reference_at(table: ReferenceTable, z: float, default: float) -> float:
    for start, end, value in table:
        if start <= z < end:
            return value
    return default


@dataclass(frozen=True)
class RetrievalSettings:
    """How spectra are fitted and inverted.

    The single-channel inversions hold one quantity fixed. It is read from
    ``reference_strain`` (temperature mode) or ``reference_temperature``
    (strain mode) at the bin centre, and from ``assumed_*`` outside every
    listed range.
    """

    weighting: str = "unweighted"
    subtract_background: bool = True
    correct_dead_time: bool = True
    inversion: str = "joint"
    assumed_strain: float = 0.0
    assumed_temperature: float = 20.0
    reference_strain: ReferenceTable = ()
    reference_temperature: ReferenceTable = ()
    dark_region: Optional[Tuple[int, int]] = None
    max_iterations: int = 200
    workers: int = 1

    def __post_init__(self) -> None:
        if self.weighting not in WEIGHTINGS:
            raise ValidationError("weighting", f"one of {WEIGHTINGS}")
        if self.inversion not in INVERSIONS:
            raise ValidationError("inversion", f"one of {INVERSIONS}")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations", "must be >= 1")
        if self.workers < 1:
            raise ValidationError("workers", "must be >= 1")
        for name in ("assumed_strain", "assumed_temperature"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(name, "must be a number")
            if not math.isfinite(value):
                raise ValidationError(name, "must be finite")
        for name in ("reference_strain", "reference_temperature"):
            object.__setattr__(self, name, _reference_table(name, getattr(self, name)))
        if self.dark_region is not None:
            start, stop = self.dark_region
            if not 0 <= start < stop:
                raise ValidationError("dark_region", "expected 0 <= start < stop")
            object.__setattr__(self, "dark_region", (int(start), int(stop)))

    def strain_at(self, z: float) -> float:
        return _reference_at(self.reference_strain, z, self.assumed_strain)

    def temperature_at(self, z: float) -> float:
        return _reference_at(self.reference_temperature, z, self.assumed_temperature)


@dataclass(frozen=True)
class BinSpectrum:
    frequencies: np.ndarray
    counts: np.ndarray
    background: np.ndarray
    bin_index: int
    range_z: float
    noise_only: bool = False

    def __post_init__(self) -> None:
        frequencies = np.asarray(self.frequencies, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        background = np.broadcast_to(
            np.asarray(self.background, dtype=float), counts.shape
        )
        object.__setattr__(self, "frequencies", frequencies)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "background", background)
        if frequencies.shape != counts.shape or frequencies.ndim != 1:
            raise ValidationError("counts", "one count per frequency expected")
        if not np.all(np.diff(frequencies) > 0):
            raise ValidationError("frequencies", "must be strictly increasing")

    @property
    def signal(self) -> np.ndarray:
        return self.counts - self.background


@dataclass
class FitResult:
    amplitude: float
    nu_b: float
    omega_total: float
    offset: float
    covariance: np.ndarray
    converged: bool = True
    n_iter: int = 0
    cost: float = 0.0
    residuals_percent: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def sigma_amplitude(self) -> float:
        return math.sqrt(max(self.covariance[0, 0], 0.0))

    @property
    def sigma_nu(self) -> float:
        return math.sqrt(max(self.covariance[1, 1], 0.0))

    @property
    def sigma_omega(self) -> float:
        return math.sqrt(max(self.covariance[2, 2], 0.0))

    def evaluate(self, nu: np.ndarray) -> np.ndarray:
        return lorentzian(
            np.asarray(nu, dtype=float),
            self.amplitude,
            self.nu_b,
            self.omega_total,
            self.offset,
        )


@dataclass
class ProfileRow:
    bin_index: int
    range_m: float
    amplitude: float = math.nan
    nu_b: float = math.nan
    sigma_nu: float = math.nan
    omega_b: float = math.nan
    sigma_omega: float = math.nan
    temperature: float = math.nan
    sigma_t: float = math.nan
    strain: float = math.nan
    sigma_strain: float = math.nan
    flags: QualityFlag = OK
    fit: Optional[FitResult] = None


@dataclass
class RetrievedProfile:
    rows: List[ProfileRow]
    inversion: str = "joint"

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    @property
    def ranges(self) -> np.ndarray:
        return self.values("range_m")

    def accepted(self) -> List[ProfileRow]:
        return [row for row in self.rows if not row.flags]


def lorentzian(
    nu: np.ndarray, amplitude: float, nu_b: float, omega: float, offset: float
) -> np.ndarray:
    return amplitude / (1 + (nu - nu_b) ** 2 / omega**2) + offset


def calibrated_frequencies(
    hmap: HysteresisMap, schedule: ScanSchedule, voltages: np.ndarray
) -> np.ndarray:
    relative = voltage_to_frequency(hmap, voltages, schedule.branch)
    return schedule.start_frequency + np.asarray(relative) - schedule.calibrated_start


def _check_branches(hist: ScanHistogram, schedule: ScanSchedule) -> None:
    if hist.branch is not schedule.branch:
        raise BranchMismatch(
            f"histogram was scanned on the {hist.branch.value} branch, "
            f"schedule is {schedule.branch.value}"
        )


def assemble_spectrum(
    hist: ScanHistogram,
    hmap: HysteresisMap,
    schedule: ScanSchedule,
    bin: int,
    background: Optional[np.ndarray] = None,
) -> BinSpectrum:
    _check_branches(hist, schedule)
    if not 0 <= bin < hist.n_bins:
        raise OutOfRange(f"bin {bin} outside [0, {hist.n_bins})")
    frequencies = calibrated_frequencies(hmap, schedule, hist.step_voltages)
    order = np.argsort(frequencies)
    if background is None:
        background = np.zeros(hist.n_steps)
    dark = hist.dark_start_bin
    return BinSpectrum(
        frequencies=frequencies[order],
        counts=np.asarray(hist.counts[:, bin], dtype=float)[order],
        background=np.asarray(background, dtype=float)[order],
        bin_index=bin,
        range_z=float(
            time_to_range((bin + 0.5) * hist.bin_width, hist.group_velocity)
        ),
        noise_only=dark is not None and bin >= dark,
    )


def estimate_background(
    hist: ScanHistogram, dark_region: Optional[Tuple[int, int]] = None
) -> np.ndarray:
    """Mean counts per step over the bins that see no backscatter."""
    if dark_region is None:
        if hist.dark_start_bin is None:
            raise NoDarkRegion(
                "the fiber fills the whole pulse period and no dark region is set"
            )
        start, stop = hist.dark_start_bin, hist.n_bins
    else:
        start, stop = dark_region[0], min(dark_region[1], hist.n_bins)
    if start >= stop:
        raise NoDarkRegion(f"dark region [{start}, {stop}) is empty")
    return np.mean(np.asarray(hist.counts, dtype=float)[:, start:stop], axis=1)


def correct_dead_time(hist: ScanHistogram) -> ScanHistogram:
    """Undo nonparalyzable censoring of every cell, counts become floats."""
    if hist.dead_time <= 0:
        return hist
    exposure = hist.pulses_per_step * hist.bin_width * 1e-9
    observed = np.asarray(hist.counts, dtype=float) / exposure
    restored = restore_dead_time(observed, hist.dead_time)
    return replace(hist, counts=restored * exposure, dead_time=0.0)


def _initial_guess(spec: BinSpectrum) -> Tuple[float, float, float, float]:
    nu, y = spec.frequencies, spec.signal
    offset = float(np.min(y))
    peak = int(np.argmax(y))
    amplitude = float(y[peak]) - offset
    if not amplitude > 0:
        raise DegenerateSpectrum(f"bin {spec.bin_index}: flat spectrum")
    half = offset + amplitude / 2

    def crossing(indices: range) -> Optional[float]:
        previous = peak
        for i in indices:
            if y[i] <= half:
                # linear interpolation between the bracketing samples
                frac = (y[previous] - half) / (y[previous] - y[i])
                return float(nu[previous] + frac * (nu[i] - nu[previous]))
            previous = i
        return None

    left = crossing(range(peak - 1, -1, -1))
    right = crossing(range(peak + 1, len(y)))
    if left is not None and right is not None:
        omega = (right - left) / 2
    elif left is not None:
        omega = nu[peak] - left
    elif right is not None:
        omega = right - nu[peak]
    else:
        omega = (nu[-1] - nu[0]) / 4
    return amplitude, float(nu[peak]), float(omega), offset


def _check_edges(spec: BinSpectrum, nu_b: float, omega: float) -> None:
    if nu_b - spec.frequencies[0] < omega or spec.frequencies[-1] - nu_b < omega:
        raise DegenerateSpectrum(
            f"bin {spec.bin_index}: peak at {nu_b:.2f} MHz is within one half-width "
            f"({omega:.2f} MHz) of the scan edge"
        )


def fit_lorentzian(
    spec: BinSpectrum,
    init: Optional[FitResult] = None,
    weighting: str = "unweighted",
    max_iterations: int = 200,
) -> FitResult:
    """Least-squares Lorentzian plus offset on the background-subtracted counts.

    Levenberg-Marquardt with an analytic Jacobian. The centre is fitted
    relative to the middle of the scan window so the step tolerance does not
    depend on the absolute frequency.
    """
    if spec.noise_only:
        raise DegenerateSpectrum(f"bin {spec.bin_index} sees noise only")
    if len(spec.frequencies) < MIN_POINTS:
        raise DegenerateSpectrum(
            f"bin {spec.bin_index}: {len(spec.frequencies)} points, "
            f"at least {MIN_POINTS} are needed"
        )

    if init is None:
        amplitude, nu_b, omega, offset = _initial_guess(spec)
    else:
        amplitude, nu_b, omega, offset = (
            init.amplitude,
            init.nu_b,
            init.omega_total,
            init.offset,
        )
    _check_edges(spec, nu_b, omega)

    center = float(np.mean(spec.frequencies[[0, -1]]))
    x = spec.frequencies - center
    y = spec.signal
    if weighting == "poisson":
        w = 1 / np.sqrt(np.maximum(spec.counts, 1.0))
    else:
        w = np.ones_like(y)

    def residuals(p: np.ndarray) -> np.ndarray:
        a, d, om, c = p
        return w * (a / (1 + (x - d) ** 2 / om**2) + c - y)

    def jacobian(p: np.ndarray) -> np.ndarray:
        a, d, om, _ = p
        u = (x - d) / om
        g = 1 / (1 + u**2)
        return np.column_stack(
            [
                w * g,
                w * a * g**2 * 2 * u / om,
                w * a * g**2 * 2 * u**2 / om,
                w,
            ]
        )

    result = optimize.least_squares(
        residuals,
        np.array([amplitude, nu_b - center, omega, offset]),
        jac=jacobian,
        method="lm",
        ftol=1e-10,
        xtol=1e-8,
        max_nfev=max_iterations,
    )
    a, d, om, c = result.x
    sign = np.array([1.0, 1.0, np.sign(om) or 1.0, 1.0])

    dof = max(len(y) - 4, 1)
    s2 = 2 * result.cost / dof
    covariance = np.linalg.pinv(result.jac.T @ result.jac) * s2
    covariance = covariance * np.outer(sign, sign)

    fit = FitResult(
        amplitude=float(a),
        nu_b=float(d + center),
        omega_total=float(abs(om)),
        offset=float(c),
        covariance=covariance,
        converged=result.status > 0,
        n_iter=int(result.nfev),
        cost=float(result.cost),
    )
    if fit.amplitude != 0:
        misfit = y - fit.evaluate(spec.frequencies)
        fit.residuals_percent = 100 * misfit / fit.amplitude

    if not fit.converged:
        raise NotConverged(
            f"bin {spec.bin_index}: {result.message} after {result.nfev} evaluations",
            fit=fit,
        )
    _check_edges(spec, fit.nu_b, fit.omega_total)
    logger.debug(
        "bin %d: nu_b=%.3f omega=%.3f A=%.4g in %d evaluations",
        spec.bin_index,
        fit.nu_b,
        fit.omega_total,
        fit.amplitude,
        fit.n_iter,
    )
    return fit


def deconvolve_width(fit: FitResult, etalon: FpiEtalon) -> float:
    return fit.omega_total - etalon.omega_fpi


def retrieve_bin(
    spec: BinSpectrum,
    etalon: FpiEtalon,
    model: SensitivityModel,
    settings: RetrievalSettings = RetrievalSettings(),
) -> ProfileRow:
    row = ProfileRow(bin_index=spec.bin_index, range_m=spec.range_z)
    if spec.noise_only:
        row.flags |= QualityFlag.NOISE_ONLY
        return row
    if len(spec.frequencies) < MIN_POINTS:
        row.flags |= QualityFlag.INSUFFICIENT
        return row
    if not np.all(np.isfinite(spec.signal)):
        logger.debug("bin %d: counts beyond dead-time recovery", spec.bin_index)
        row.flags |= QualityFlag.SATURATED
        return row

    try:
        fit = fit_lorentzian(
            spec, weighting=settings.weighting, max_iterations=settings.max_iterations
        )
    except NotConverged as exc:
        row.flags |= QualityFlag.NOT_CONVERGED
        row.fit = exc.fit
        return row
    except DegenerateSpectrum:
        row.flags |= QualityFlag.DEGENERATE
        return row

    row.fit = fit
    row.amplitude = fit.amplitude
    row.nu_b = fit.nu_b
    row.sigma_nu = fit.sigma_nu
    row.omega_b = deconvolve_width(fit, etalon)
    row.sigma_omega = fit.sigma_omega
    if row.omega_b <= 0:
        row.flags |= QualityFlag.NON_PHYSICAL
        return row

    try:
        if settings.inversion == "joint":
            env = environment_from_line(
                model, BrillouinLine(g0=1.0, nu_b=fit.nu_b, omega_b=row.omega_b)
            )
            cov = environment_covariance(model, fit.covariance[1:3, 1:3])
            row.temperature, row.strain = env.temperature, env.strain
            row.sigma_t = math.sqrt(max(cov[0, 0], 0.0))
            row.sigma_strain = math.sqrt(max(cov[1, 1], 0.0))
        elif settings.inversion == "temperature":
            strain = settings.strain_at(spec.range_z)
            row.temperature, var_t = temperature_from_shift(
                model, fit.nu_b, strain, fit.covariance[1, 1]
            )
            row.sigma_t = math.sqrt(max(var_t, 0.0))
            row.strain, row.sigma_strain = strain, 0.0
        else:
            temperature = settings.temperature_at(spec.range_z)
            row.strain, var_e = strain_from_shift(
                model, fit.nu_b, temperature, fit.covariance[1, 1]
            )
            row.sigma_strain = math.sqrt(max(var_e, 0.0))
            row.temperature, row.sigma_t = temperature, 0.0
    except IllConditioned:
        row.flags |= QualityFlag.ILL_CONDITIONED
    return row


def retrieve_profile(
    hist: ScanHistogram,
    hmap: HysteresisMap,
    schedule: ScanSchedule,
    etalon: FpiEtalon,
    model: SensitivityModel,
    settings: RetrievalSettings = RetrievalSettings(),
) -> RetrievedProfile:
    """Fit and invert every bin of ``hist``."""
    _check_branches(hist, schedule)
    hmap.fit_for(schedule.branch)

    if settings.correct_dead_time:
        hist = correct_dead_time(hist)

    background = np.zeros(hist.n_steps)
    if settings.subtract_background:
        try:
            background = estimate_background(hist, settings.dark_region)
        except NoDarkRegion as exc:
            logger.warning("background not subtracted: %s", exc)

    def _one(bin: int) -> ProfileRow:
        spec = assemble_spectrum(hist, hmap, schedule, bin, background)
        return retrieve_bin(spec, etalon, model, settings)

    bins = range(hist.n_bins)
    if settings.workers > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            rows = list(pool.map(_one, bins))
    else:
        rows = [_one(b) for b in bins]

    flagged = sum(1 for r in rows if r.flags and r.flags != QualityFlag.NOISE_ONLY)
    if flagged:
        logger.warning("%d of %d fiber bins flagged", flagged, len(rows))
    logger.info(
        "retrieved %d bins (%s inversion), %d accepted",
        len(rows),
        settings.inversion,
        sum(1 for r in rows if not r.flags),
    )
    return RetrievedProfile(rows=rows, inversion=settings.inversion)
