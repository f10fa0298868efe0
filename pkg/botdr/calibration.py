"""Interferometer scan calibration: PZT voltage to frequency, per branch.

The transmission of the swept interferometer is recorded against the PZT
voltage while the voltage rises (up branch) and while it falls (down
branch). Transmission peaks are one free spectral range apart in frequency,
so tagging them with consecutive interference orders gives samples of the
voltage-to-frequency map, which is fitted with a cubic per branch.

Frequencies on a calibrated map are relative: order 0 sits at the lowest
voltage peak of the trace. Retrieval anchors the absolute axis separately.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize, signal

from botdr.core_model import FpiEtalon, eval_fpi
from botdr.errors import (
    BranchMismatch,
    CalibrationError,
    InsufficientPoints,
    NonMonotone,
    OutOfCalibratedRange,
    TooFewPeaks,
    ValidationError,
)

logger = logging.getLogger("botdr.calibration")

ArrayLike = Union[float, np.ndarray]

# voltage slack when checking the calibrated range, relative to its span
_RANGE_TOLERANCE = 1e-9


class Branch(Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class CalibrationTrace:
    voltages: np.ndarray
    power: np.ndarray
    branch: Branch

    def __post_init__(self) -> None:
        voltages = np.asarray(self.voltages, dtype=float)
        power = np.asarray(self.power, dtype=float)
        object.__setattr__(self, "voltages", voltages)
        object.__setattr__(self, "power", power)
        if voltages.ndim != 1 or voltages.shape != power.shape:
            raise ValidationError("samples", "voltages and power must be equal 1-d")
        steps = np.diff(voltages)
        direction = steps > 0 if self.branch is Branch.UP else steps < 0
        if not np.all(direction):
            raise ValidationError(
                "voltages", f"not strictly monotone for the {self.branch.value} branch"
            )


@dataclass(frozen=True)
class Peak:
    voltage: float
    height: float


@dataclass(frozen=True)
class TaggedPeak:
    voltage: float
    order: int
    frequency: float


@dataclass(frozen=True)
class BranchFit:
    """Cubic voltage-to-frequency map of one branch, increasing powers."""

    coefficients: Tuple[float, float, float, float]
    v_min: float
    v_max: float
    residuals: Tuple[float, ...] = ()

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals))) if self.residuals else 0.0

    def __call__(self, v: ArrayLike) -> ArrayLike:
        return P.polyval(v, self.coefficients)


@dataclass(frozen=True)
class HysteresisMap:
    fsr: float
    branches: Dict[Branch, BranchFit] = field(default_factory=dict)

    def fit_for(self, branch: Branch) -> BranchFit:
        try:
            return self.branches[branch]
        except KeyError:
            raise BranchMismatch(
                f"no {branch.value} branch in the hysteresis map "
                f"(has {sorted(b.value for b in self.branches)})"
            ) from None

    def with_branch(self, branch: Branch, fit: BranchFit) -> "HysteresisMap":
        branches = dict(self.branches)
        branches[branch] = fit
        spans = {
            round((f(f.v_max) - f(f.v_min)) / self.fsr) for f in branches.values()
        }
        if len(spans) > 1:
            raise CalibrationError(
                "branches cover different frequency spans (unequal peak counts)"
            )
        return HysteresisMap(fsr=self.fsr, branches=branches)


@dataclass(frozen=True)
class PztModel:
    """Ground-truth PZT response used to synthesize calibration data.

    The down branch is the up branch lifted by ``opening * 4 s (1 - s)`` with
    ``s`` the normalized voltage, so both branches meet at the sweep ends.
    """

    v_min: float = 0.0
    v_max: float = 100.0
    up: Tuple[float, float, float, float] = (-1000.0, 200.0, 0.8, -0.001)
    opening: float = 1500.0

    def __post_init__(self) -> None:
        if not self.v_max > self.v_min:
            raise ValidationError("v_max", "must exceed v_min")
        if len(self.up) != 4:
            raise ValidationError("up", "four cubic coefficients expected")
        grid = np.linspace(self.v_min, self.v_max, 1001)
        for branch in Branch:
            if not np.all(np.diff(self.frequency(grid, branch)) > 0):
                raise ValidationError("up", f"{branch.value} branch is not increasing")

    @property
    def down(self) -> Tuple[float, ...]:
        span = self.v_max - self.v_min
        # 4 * opening * (v - v_min) * (v_max - v) / span**2
        bump = P.polymul([-self.v_min, 1.0], [self.v_max, -1.0]) * (
            4 * self.opening / span**2
        )
        return tuple(float(c) for c in P.polyadd(self.up, bump))

    def coefficients(self, branch: Branch) -> Tuple[float, ...]:
        return tuple(self.up) if branch is Branch.UP else self.down

    def frequency(self, v: ArrayLike, branch: Branch) -> ArrayLike:
        return P.polyval(v, self.coefficients(branch))

    def to_map(self, fsr: float) -> HysteresisMap:
        """Exact map of this model, order 0 at the first transmission peak."""
        branches = {}
        for branch in Branch:
            coefficients = np.array(self.coefficients(branch), dtype=float)
            f_lo = self.frequency(self.v_min, branch)
            f_hi = self.frequency(self.v_max, branch)
            first = int(np.floor(f_lo / fsr)) + 1
            last = int(np.ceil(f_hi / fsr)) - 1
            coefficients[0] -= first * fsr

            def _root(target: float) -> float:
                return optimize.brentq(
                    lambda v: P.polyval(v, coefficients) - target,
                    self.v_min,
                    self.v_max,
                    xtol=1e-12,
                )

            branches[branch] = BranchFit(
                coefficients=tuple(float(c) for c in coefficients),  # type: ignore
                v_min=_root(0.0),
                v_max=_root((last - first) * fsr),
            )
        return HysteresisMap(fsr=fsr, branches=branches)


def find_peaks(trace: CalibrationTrace, min_prominence: float = 0.5) -> List[Peak]:
    order = np.argsort(trace.voltages)
    voltages = trace.voltages[order]
    power = trace.power[order]
    peak_max = float(np.max(power)) if power.size else 0.0
    if peak_max <= 0:
        raise TooFewPeaks("trace carries no transmitted power")

    # prominence also rejects noise ripples on the peak tops
    threshold = min_prominence * peak_max
    indices, _ = signal.find_peaks(power, height=threshold, prominence=threshold)
    if len(indices) < 3:
        raise TooFewPeaks(f"found {len(indices)} peaks, at least 3 are needed")

    peaks = [_refine_peak(voltages, power, int(i)) for i in indices]
    logger.debug("found %d peaks on the %s branch", len(peaks), trace.branch.value)
    return peaks


def _refine_peak(voltages: np.ndarray, power: np.ndarray, index: int) -> Peak:
    # parabola on log-power over the samples above half the local maximum
    half = power[index] / 2
    lo = index
    while lo > 0 and power[lo - 1] > half:
        lo -= 1
    hi = index
    while hi < len(power) - 1 and power[hi + 1] > half:
        hi += 1
    lo = min(lo, index - 1)
    hi = max(hi, index + 1)

    window = slice(lo, hi + 1)
    positive = power[window] > 0
    v = voltages[window][positive]
    if v.size < 3:
        return Peak(voltage=float(voltages[index]), height=float(power[index]))
    center = voltages[index]
    c0, c1, c2 = P.polyfit(v - center, np.log(power[window][positive]), 2)
    if c2 >= 0:
        return Peak(voltage=float(voltages[index]), height=float(power[index]))
    offset = -c1 / (2 * c2)
    offset = float(np.clip(offset, v[0] - center, v[-1] - center))
    return Peak(
        voltage=float(center + offset),
        height=float(np.exp(P.polyval(offset, [c0, c1, c2]))),
    )


def assign_orders(peaks: Sequence[Peak], fsr: float) -> List[TaggedPeak]:
    if len(peaks) < 3:
        raise TooFewPeaks(f"{len(peaks)} peaks given, at least 3 are needed")
    ordered = sorted(peaks, key=lambda p: p.voltage)
    return [
        TaggedPeak(voltage=p.voltage, order=i, frequency=i * fsr)
        for i, p in enumerate(ordered)
    ]


def fit_branch(tagged_peaks: Sequence[TaggedPeak]) -> BranchFit:
    if len(tagged_peaks) < 4:
        raise InsufficientPoints(
            f"a cubic needs at least 4 tagged peaks, got {len(tagged_peaks)}"
        )
    ordered = sorted(tagged_peaks, key=lambda p: p.voltage)
    v = np.array([p.voltage for p in ordered])
    f = np.array([p.frequency for p in ordered])

    coefficients = P.polyfit(v, f, 3)
    residuals = f - P.polyval(v, coefficients)

    slope = P.polyval(np.linspace(v[0], v[-1], 1000), P.polyder(coefficients))
    if not (np.all(slope > 0) or np.all(slope < 0)):
        raise NonMonotone("fitted cubic changes direction inside the peak range")

    return BranchFit(
        coefficients=tuple(float(c) for c in coefficients),  # type: ignore
        v_min=float(v[0]),
        v_max=float(v[-1]),
        residuals=tuple(float(r) for r in residuals),
    )


def calibrate_trace(
    trace: CalibrationTrace, fsr: float, min_prominence: float = 0.5
) -> BranchFit:
    tagged = assign_orders(find_peaks(trace, min_prominence), fsr)
    fit = fit_branch(tagged)
    logger.info(
        "calibrated %s branch: %d orders, max residual %.3g MHz",
        trace.branch.value,
        len(tagged),
        fit.max_residual,
    )
    return fit


def calibrate(
    traces: Iterable[CalibrationTrace],
    fsr: float,
    min_prominence: float = 0.5,
    base: Optional[HysteresisMap] = None,
) -> HysteresisMap:
    hmap = base or HysteresisMap(fsr=fsr)
    if hmap.fsr != fsr:
        raise CalibrationError(f"cannot merge maps with fsr {hmap.fsr} and {fsr}")
    for trace in traces:
        hmap = hmap.with_branch(
            trace.branch, calibrate_trace(trace, fsr, min_prominence)
        )
    return hmap


def voltage_to_frequency(
    hmap: HysteresisMap, v: ArrayLike, branch: Branch
) -> ArrayLike:
    fit = hmap.fit_for(branch)
    v_arr = np.asarray(v, dtype=float)
    slack = _RANGE_TOLERANCE * (fit.v_max - fit.v_min)
    if np.any(v_arr < fit.v_min - slack) or np.any(v_arr > fit.v_max + slack):
        raise OutOfCalibratedRange(
            f"voltage outside the calibrated {branch.value} range "
            f"[{fit.v_min:.6g}, {fit.v_max:.6g}] V"
        )
    return fit(v_arr)


def frequency_to_voltage(hmap: HysteresisMap, f: float, branch: Branch) -> float:
    fit = hmap.fit_for(branch)
    f_lo, f_hi = sorted((float(fit(fit.v_min)), float(fit(fit.v_max))))
    if not f_lo <= f <= f_hi:
        raise OutOfCalibratedRange(
            f"frequency {f:.6g} MHz outside the calibrated {branch.value} span "
            f"[{f_lo:.6g}, {f_hi:.6g}] MHz"
        )
    return float(
        optimize.brentq(lambda v: fit(v) - f, fit.v_min, fit.v_max, xtol=1e-12)
    )


def simulate_calibration_trace(
    model: PztModel,
    etalon: FpiEtalon,
    branch: Branch = Branch.UP,
    n_samples: int = 20000,
    noise: float = 0.0,
    noise_model: str = "multiplicative",
    seed: Optional[Union[int, np.random.SeedSequence]] = None,
) -> CalibrationTrace:
    voltages = np.linspace(model.v_min, model.v_max, n_samples)
    if branch is Branch.DOWN:
        voltages = voltages[::-1]
    frequency = model.frequency(voltages, branch)
    folded = np.mod(frequency + etalon.fsr / 2, etalon.fsr) - etalon.fsr / 2
    power = np.asarray(eval_fpi(etalon, folded), dtype=float)

    if noise > 0:
        rng = np.random.default_rng(seed)
        if noise_model == "multiplicative":
            power = power * (1 + noise * rng.standard_normal(n_samples))
        elif noise_model == "additive":
            power = power + noise * np.max(power) * rng.standard_normal(n_samples)
        else:
            raise ValidationError("noise_model", f"unknown model {noise_model!r}")
    return CalibrationTrace(voltages=voltages, power=power, branch=branch)
