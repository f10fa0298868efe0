"""Forward model of the photon-counting acquisition chain.

A rectangular probe pulse travels down the fiber; the spontaneous Brillouin
backscatter of every range cell is filtered by the FBG, passed through the
scanning interferometer parked at one frequency per scan step and counted by
the detector into multiscaler time bins. Counts per (step, bin) are Poisson
with a mean given by the link budget below.

Units: frequencies MHz, times ns (``dwell`` in s), lengths m, attenuation
dB/km, rates counts/s. ``expected_rate`` is counts per pulse and bin.
"""
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import legendre

from botdr.calibration import Branch, HysteresisMap, frequency_to_voltage
from botdr.core_model import (
    Environment,
    FpiEtalon,
    LineKind,
    SensitivityModel,
    eval_fpi,
    eval_transmission,
    line_from_environment,
)
from botdr.errors import OutOfRange, ValidationError

logger = logging.getLogger("botdr.scan_engine")

ArrayLike = Union[float, np.ndarray]

SAMPLING_MODES = ("poisson", "expected")

_GAUSS_NODES, _GAUSS_WEIGHTS = legendre.leggauss(8)


@dataclass(frozen=True)
class FiberSegment:
    length: float
    environment: Environment
    attenuation: float = 0.2
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not self.length > 0:
            raise ValidationError("length", "segment length must be > 0")
        if not self.attenuation >= 0:
            raise ValidationError("attenuation", "must be >= 0")
        if not self.amplitude >= 0:
            raise ValidationError("amplitude", "must be >= 0")


@dataclass(frozen=True)
class FiberProfile:
    segments: Tuple[FiberSegment, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValidationError("segments", "at least one segment is required")

    @property
    def total_length(self) -> float:
        return float(sum(s.length for s in self.segments))

    @property
    def boundaries(self) -> np.ndarray:
        """Segment edges from 0 to ``total_length``."""
        return np.concatenate([[0.0], np.cumsum([s.length for s in self.segments])])

    def segment_index(self, z: float) -> int:
        if not 0 <= z <= self.total_length:
            raise OutOfRange(f"z={z} m is outside the fiber [0, {self.total_length}]")
        index = int(np.searchsorted(self.boundaries, z, side="right")) - 1
        return min(index, len(self.segments) - 1)

    def environment_at(self, z: float) -> Environment:
        return self.segments[self.segment_index(z)].environment

    def loss_db(self, z: ArrayLike) -> ArrayLike:
        """One-way attenuation accumulated from the fiber input to ``z``."""
        cumulative = np.concatenate(
            [[0.0], np.cumsum([s.attenuation * s.length / 1000 for s in self.segments])]
        )
        return np.interp(z, self.boundaries, cumulative)

    @classmethod
    def homogeneous(
        cls,
        length: float,
        temperature: float,
        strain: float = 0.0,
        attenuation: float = 0.2,
    ) -> "FiberProfile":
        return cls(
            segments=(
                FiberSegment(length, Environment(temperature, strain), attenuation),
            )
        )


@dataclass(frozen=True)
class InstrumentConfig:
    pulse_duration: float = 300.0
    peak_power: float = 0.1
    rep_rate: float = 8.0
    group_velocity: float = 2.0e8
    detector_efficiency: float = 0.17
    noise_rate: float = 700.0
    dead_time: float = 23.0
    fbg_suppression_db: float = 35.0
    rayleigh_to_brillouin: float = 20.0
    bin_width: float = 300.0
    capture_coefficient: Optional[float] = None
    target_peak_rate: float = 1e5
    censor_dead_time: bool = True
    smear_pulse: bool = True
    line: LineKind = LineKind.STOKES

    def __post_init__(self) -> None:
        for name in (
            "pulse_duration",
            "peak_power",
            "rep_rate",
            "group_velocity",
            "detector_efficiency",
            "bin_width",
            "target_peak_rate",
        ):
            if not getattr(self, name) > 0:
                raise ValidationError(name, "must be > 0")
        for name in (
            "noise_rate",
            "dead_time",
            "fbg_suppression_db",
            "rayleigh_to_brillouin",
        ):
            if not getattr(self, name) >= 0:
                raise ValidationError(name, "must be >= 0")
        if self.capture_coefficient is not None and not self.capture_coefficient >= 0:
            raise ValidationError("capture_coefficient", "must be >= 0")
        if self.detector_efficiency > 1:
            raise ValidationError("detector_efficiency", "must be a fraction <= 1")
        if not isinstance(self.line, LineKind):
            object.__setattr__(self, "line", LineKind(self.line))

    @property
    def rep_period(self) -> float:
        """Pulse period in ns."""
        return 1e6 / self.rep_rate

    @property
    def pulse_energy(self) -> float:
        """Pulse energy in J."""
        return self.peak_power * self.pulse_duration * 1e-9

    @property
    def n_bins(self) -> int:
        return math.ceil(self.rep_period / self.bin_width)

    @property
    def effective_dead_time(self) -> float:
        return self.dead_time if self.censor_dead_time else 0.0

    @property
    def leak_fraction(self) -> float:
        """Rayleigh leak relative to the Brillouin amplitude at equal transmission."""
        return self.rayleigh_to_brillouin * 10 ** (-self.fbg_suppression_db / 10)

    def pulses(self, dwell: float) -> float:
        return dwell * self.rep_rate * 1e3


@dataclass(frozen=True)
class ScanSchedule:
    voltages: Tuple[float, ...]
    branch: Branch = Branch.UP
    freq_step: float = 15.0
    dwell: float = 1.0
    start_frequency: float = 10557.5
    calibrated_start: float = 1000.0

    def __post_init__(self) -> None:
        voltages = tuple(float(v) for v in self.voltages)
        object.__setattr__(self, "voltages", voltages)
        if not isinstance(self.branch, Branch):
            object.__setattr__(self, "branch", Branch(self.branch))
        if len(voltages) < 3:
            raise ValidationError("n_steps", "at least 3 scan steps are required")
        steps = np.diff(voltages)
        rising = self.branch is Branch.UP
        if not np.all(steps > 0 if rising else steps < 0):
            raise ValidationError(
                "voltages", f"not monotone for the {self.branch.value} branch"
            )
        if not self.freq_step > 0:
            raise ValidationError("freq_step", "must be > 0")
        if not self.dwell > 0:
            raise ValidationError("dwell", "must be > 0")

    @property
    def n_steps(self) -> int:
        return len(self.voltages)

    @property
    def nominal_frequencies(self) -> np.ndarray:
        """Planned absolute frequencies in issue order."""
        offsets = np.arange(self.n_steps) * self.freq_step
        if self.branch is Branch.DOWN:
            offsets = offsets[::-1]
        return self.start_frequency + offsets


@dataclass
class ScanHistogram:
    counts: np.ndarray
    bin_width: float
    step_frequencies: np.ndarray
    step_voltages: np.ndarray
    branch: Branch
    group_velocity: float
    pulses_per_step: float
    dead_time: float = 0.0
    dark_start_bin: Optional[int] = None
    seed: Optional[int] = None
    sampling: str = "poisson"
    line: LineKind = LineKind.STOKES
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.counts = np.asarray(self.counts)
        self.step_frequencies = np.asarray(self.step_frequencies, dtype=float)
        self.step_voltages = np.asarray(self.step_voltages, dtype=float)
        if self.counts.ndim != 2:
            raise ValidationError("counts", "must be a [n_steps x n_bins] matrix")
        if np.any(self.counts < 0):
            raise ValidationError("counts", "must be >= 0")
        n_steps = self.counts.shape[0]
        if len(self.step_frequencies) != n_steps or len(self.step_voltages) != n_steps:
            raise ValidationError("step_frequencies", "one entry per scan step")
        if self.sampling not in SAMPLING_MODES:
            raise ValidationError("sampling", f"one of {SAMPLING_MODES}")

    @property
    def n_steps(self) -> int:
        return int(self.counts.shape[0])

    @property
    def n_bins(self) -> int:
        return int(self.counts.shape[1])

    @property
    def bin_ranges(self) -> np.ndarray:
        centers = (np.arange(self.n_bins) + 0.5) * self.bin_width
        return time_to_range(centers, self.group_velocity)


def time_to_range(t: ArrayLike, group_velocity: float) -> ArrayLike:
    return group_velocity * np.asarray(t) * 1e-9 / 2


def unambiguous_range(cfg: InstrumentConfig) -> float:
    return cfg.group_velocity / (2 * cfg.rep_rate * 1e3)


def bin_centers(cfg: InstrumentConfig) -> np.ndarray:
    centers = (np.arange(cfg.n_bins) + 0.5) * cfg.bin_width
    return time_to_range(centers, cfg.group_velocity)


def dark_start_bin(profile: FiberProfile, cfg: InstrumentConfig) -> Optional[int]:
    """First bin that opens after the last backscatter from the fiber end."""
    last_arrival = 2 * profile.total_length / cfg.group_velocity * 1e9
    if cfg.smear_pulse:
        last_arrival += cfg.pulse_duration
    first = math.ceil(last_arrival / cfg.bin_width - 1e-9)
    return first if first < cfg.n_bins else None


def check_unambiguous(profile: FiberProfile, cfg: InstrumentConfig) -> None:
    if profile.total_length >= unambiguous_range(cfg):
        raise ValidationError(
            "rep_rate",
            f"fiber of {profile.total_length:.0f} m exceeds the unambiguous range "
            f"{unambiguous_range(cfg):.0f} m at {cfg.rep_rate} kHz",
        )


def apply_dead_time(event_rate: ArrayLike, dead_time: float) -> ArrayLike:
    """Nonparalyzable dead time, ``dead_time`` in ns."""
    rate = np.asarray(event_rate, dtype=float)
    return rate / (1 + rate * dead_time * 1e-9)


def restore_dead_time(observed_rate: ArrayLike, dead_time: float) -> ArrayLike:
    rate = np.asarray(observed_rate, dtype=float)
    loss = rate * dead_time * 1e-9
    with np.errstate(divide="ignore"):
        return np.where(loss < 1, rate / (1 - loss), np.inf)


def capture(cfg: InstrumentConfig, etalon: FpiEtalon) -> float:
    if cfg.capture_coefficient is not None:
        return cfg.capture_coefficient
    return cfg.target_peak_rate / (
        cfg.pulse_energy * cfg.detector_efficiency * etalon.transmission_factor
    )


def range_kernel(profile: FiberProfile, cfg: InstrumentConfig) -> np.ndarray:
    return _range_kernel(profile, cfg).copy()


@functools.lru_cache(maxsize=16)
def _range_kernel(profile: FiberProfile, cfg: InstrumentConfig) -> np.ndarray:
    """Per bin and segment: amplitude x two-way attenuation x gate weight, in s.

    With pulse smearing the weight of a point ``z`` is the time the pulse
    backscatter from ``z`` spends inside the bin, divided by the pulse length
    in range; it integrates to the bin width over a homogeneous fiber.
    """
    n_bins = cfg.n_bins
    kernel = np.zeros((n_bins, len(profile.segments)))
    length = profile.total_length
    v = cfg.group_velocity
    dt = cfg.bin_width * 1e-9
    tau = cfg.pulse_duration * 1e-9

    def attenuated(z: np.ndarray, k: int) -> np.ndarray:
        two_way = 10 ** (-2 * profile.loss_db(z) / 10)
        return profile.segments[k].amplitude * two_way

    if not cfg.smear_pulse:
        for i, z in enumerate(bin_centers(cfg)):
            if z < length:
                k = profile.segment_index(z)
                kernel[i, k] = attenuated(np.array(z), k) * dt
        return kernel

    edges = profile.boundaries
    for i in range(n_bins):
        t0 = i * dt
        knots = v * np.array([t0 - tau, t0, t0 + dt - tau, t0 + dt]) / 2
        points = np.unique(np.clip(np.concatenate([knots, edges]), 0.0, length))
        lo_support, hi_support = max(knots[0], 0.0), min(knots[-1], length)
        for a, b in zip(points[:-1], points[1:]):
            if b <= a or b <= lo_support or a >= hi_support:
                continue
            mid, half = (a + b) / 2, (b - a) / 2
            k = profile.segment_index(mid)
            z = mid + half * _GAUSS_NODES
            t_z = 2 * z / v
            overlap = np.clip(
                np.minimum(t_z + tau, t0 + dt) - np.maximum(t_z, t0), 0, None
            )
            weight = overlap / (v * tau / 2)
            kernel[i, k] += half * np.sum(_GAUSS_WEIGHTS * attenuated(z, k) * weight)
    return kernel


def _rate_matrix(
    profile: FiberProfile,
    cfg: InstrumentConfig,
    model: SensitivityModel,
    etalon: FpiEtalon,
    nu_center: np.ndarray,
) -> np.ndarray:
    """Expected counts per pulse before dead time, [n_steps x n_bins]."""
    nu_center = np.atleast_1d(np.asarray(nu_center, dtype=float))
    leak = cfg.leak_fraction * np.asarray(eval_fpi(etalon, nu_center), dtype=float)
    spectra = np.stack(
        [
            np.asarray(
                eval_transmission(
                    line_from_environment(model, segment.environment),
                    etalon,
                    nu_center,
                ),
                dtype=float,
            )
            + leak
            for segment in profile.segments
        ],
        axis=1,
    )
    scale = (
        capture(cfg, etalon)
        * cfg.pulse_energy
        * cfg.detector_efficiency
        * etalon.transmission_factor
    )
    signal = scale * spectra @ _range_kernel(profile, cfg).T
    return signal + cfg.noise_rate * cfg.bin_width * 1e-9


def expected_rate(
    profile: FiberProfile,
    cfg: InstrumentConfig,
    model: SensitivityModel,
    etalon: FpiEtalon,
    nu_center: float,
    bin: int,
    beyond_fiber: str = "raise",
) -> float:
    """Expected detected counts per pulse in ``bin`` with the interferometer at
    ``nu_center``, noise included, dead time not applied.

    Bins opening after the fiber end raise ``OutOfRange``, or carry only the
    noise term with ``beyond_fiber="noise"``.
    """
    if not 0 <= bin < cfg.n_bins:
        raise OutOfRange(f"bin {bin} outside [0, {cfg.n_bins})")
    dark = dark_start_bin(profile, cfg)
    if dark is not None and bin >= dark:
        if beyond_fiber == "noise":
            return cfg.noise_rate * cfg.bin_width * 1e-9
        raise OutOfRange(f"bin {bin} lies beyond the fiber end (dark from {dark})")
    rates = _rate_matrix(profile, cfg, model, etalon, np.array([nu_center]))
    return float(rates[0, bin])


def expected_counts(
    profile: FiberProfile,
    cfg: InstrumentConfig,
    model: SensitivityModel,
    etalon: FpiEtalon,
    frequencies: Sequence[float],
    dwell: float,
) -> np.ndarray:
    """Mean counts per (step, bin) after dead-time censoring."""
    per_pulse = _rate_matrix(profile, cfg, model, etalon, np.asarray(frequencies))
    dt = cfg.bin_width * 1e-9
    rate = apply_dead_time(per_pulse / dt, cfg.effective_dead_time)
    return cfg.pulses(dwell) * dt * rate


def step_frequencies(schedule: ScanSchedule, hmap: HysteresisMap) -> np.ndarray:
    """Absolute interferometer frequency reached at each scheduled voltage."""
    fit = hmap.fit_for(schedule.branch)
    relative = np.asarray(fit(np.asarray(schedule.voltages)), dtype=float)
    return schedule.start_frequency + relative - schedule.calibrated_start


def plan_schedule(
    hmap: HysteresisMap,
    branch: Branch = Branch.UP,
    n_steps: int = 40,
    freq_step: float = 15.0,
    dwell: float = 1.0,
    start_frequency: Optional[float] = None,
    calibrated_start: float = 1000.0,
) -> ScanSchedule:
    if start_frequency is None:
        start_frequency = SensitivityModel().nu_ref - (n_steps - 1) * freq_step / 2
    targets = calibrated_start + np.arange(n_steps) * freq_step
    voltages = [frequency_to_voltage(hmap, float(f), branch) for f in targets]
    if branch is Branch.DOWN:
        voltages.reverse()
    logger.debug(
        "planned %d steps on the %s branch, %.2f-%.2f V",
        n_steps,
        branch.value,
        min(voltages),
        max(voltages),
    )
    return ScanSchedule(
        voltages=tuple(voltages),
        branch=branch,
        freq_step=freq_step,
        dwell=dwell,
        start_frequency=start_frequency,
        calibrated_start=calibrated_start,
    )


def _cell_generator(key: np.ndarray, step: int, bin: int) -> np.random.Generator:
    counter = (step << 192) | (bin << 128)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _sample_steps(
    mu: np.ndarray, key: np.ndarray, steps: Sequence[int]
) -> List[Tuple[int, np.ndarray]]:
    rows = []
    for step in steps:
        row = np.empty(mu.shape[1], dtype=np.int64)
        for b, mean in enumerate(mu[step]):
            row[b] = _cell_generator(key, step, b).poisson(mean)
        rows.append((step, row))
    return rows


def simulate_histogram(
    profile: FiberProfile,
    cfg: InstrumentConfig,
    model: SensitivityModel,
    etalon: FpiEtalon,
    schedule: ScanSchedule,
    hysteresis: HysteresisMap,
    seed: int,
    sampling: str = "poisson",
    workers: int = 1,
) -> ScanHistogram:
    """Simulate one scan.

    ``hysteresis`` is the true response of the interferometer scan, so the
    frequency reached at each step includes whatever calibration error the
    planning map carried. Every (step, bin) cell has its own Philox stream
    keyed by ``seed``; the result does not depend on ``workers``.
    """
    if sampling not in SAMPLING_MODES:
        raise ValidationError("sampling", f"one of {SAMPLING_MODES}")
    if workers < 1:
        raise ValidationError("workers", "must be >= 1")
    check_unambiguous(profile, cfg)

    true_frequencies = step_frequencies(schedule, hysteresis)
    mu = expected_counts(profile, cfg, model, etalon, true_frequencies, schedule.dwell)

    if sampling == "expected":
        counts: np.ndarray = mu
    else:
        key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
        counts = np.empty(mu.shape, dtype=np.int64)
        chunks = [list(range(s, mu.shape[0], workers)) for s in range(workers)]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(lambda c: _sample_steps(mu, key, c), chunks)
                for rows in results:
                    for step, row in rows:
                        counts[step] = row
        else:
            for step, row in _sample_steps(mu, key, chunks[0]):
                counts[step] = row

    logger.info(
        "simulated %d steps x %d bins (%s, seed %s), %.4g counts in total",
        mu.shape[0],
        mu.shape[1],
        sampling,
        seed,
        float(np.sum(counts)),
    )
    return ScanHistogram(
        counts=counts,
        bin_width=cfg.bin_width,
        step_frequencies=schedule.nominal_frequencies,
        step_voltages=np.asarray(schedule.voltages),
        branch=schedule.branch,
        group_velocity=cfg.group_velocity,
        pulses_per_step=cfg.pulses(schedule.dwell),
        dead_time=cfg.effective_dead_time,
        dark_start_bin=dark_start_bin(profile, cfg),
        seed=seed,
        sampling=sampling,
        line=cfg.line,
    )
