import time

import numpy as np
import pytest
from numpy.polynomial import polynomial as P
from scipy import optimize

from botdr.calibration import (
    Branch,
    BranchFit,
    CalibrationTrace,
    HysteresisMap,
    Peak,
    PztModel,
    TaggedPeak,
    assign_orders,
    calibrate,
    calibrate_trace,
    find_peaks,
    fit_branch,
    frequency_to_voltage,
    simulate_calibration_trace,
    voltage_to_frequency,
)
from botdr.errors import (
    BranchMismatch,
    CalibrationError,
    InsufficientPoints,
    NonMonotone,
    OutOfCalibratedRange,
    TooFewPeaks,
    ValidationError,
)


def _true_peak_voltages(pzt, branch, fsr):
    return [
        optimize.brentq(
            lambda v: pzt.frequency(v, branch) - k * fsr, pzt.v_min, pzt.v_max
        )
        for k in range(7)
    ]


@pytest.mark.parametrize("branch", list(Branch))
def test_model_spans_seven_orders(pzt, etalon, branch):
    fit = pzt.to_map(etalon.fsr).fit_for(branch)
    span = fit(fit.v_max) - fit(fit.v_min)
    assert span == pytest.approx(6 * etalon.fsr)
    assert fit(fit.v_min) == pytest.approx(0.0, abs=1e-6)


def test_model_loop_closes(pzt):
    for v in (pzt.v_min, pzt.v_max):
        assert pzt.frequency(v, Branch.DOWN) == pytest.approx(
            pzt.frequency(v, Branch.UP)
        )
    middle = (pzt.v_min + pzt.v_max) / 2
    opening = pzt.frequency(middle, Branch.DOWN) - pzt.frequency(middle, Branch.UP)
    assert opening == pytest.approx(pzt.opening)


def test_model_must_increase():
    with pytest.raises(ValidationError):
        PztModel(up=(0.0, -10.0, 0.0, 0.0))
    with pytest.raises(ValidationError):
        PztModel(v_min=10.0, v_max=5.0)


@pytest.mark.parametrize("branch", list(Branch))
def test_find_peaks_noiseless(pzt, etalon, branch):
    trace = simulate_calibration_trace(pzt, etalon, branch=branch)
    peaks = find_peaks(trace)
    assert len(peaks) == 7
    found = sorted(p.voltage for p in peaks)
    np.testing.assert_allclose(
        found, _true_peak_voltages(pzt, branch, etalon.fsr), atol=2e-3
    )
    for peak in peaks:
        assert 0.9 < peak.height < 1.05


def test_down_trace_is_descending(pzt, etalon):
    trace = simulate_calibration_trace(pzt, etalon, branch=Branch.DOWN, n_samples=500)
    assert np.all(np.diff(trace.voltages) < 0)
    with pytest.raises(ValidationError):
        CalibrationTrace(trace.voltages[::-1], trace.power, Branch.DOWN)


def test_too_few_peaks():
    v = np.linspace(0.0, 10.0, 1000)
    two = np.exp(-((v - 3) ** 2)) + np.exp(-((v - 7) ** 2))
    with pytest.raises(TooFewPeaks):
        find_peaks(CalibrationTrace(v, two, Branch.UP))
    with pytest.raises(TooFewPeaks):
        find_peaks(CalibrationTrace(v, np.zeros_like(v), Branch.UP))


def test_assign_orders_sorts_by_voltage():
    peaks = [Peak(5.0, 1.0), Peak(1.0, 1.0), Peak(3.0, 0.9)]
    tagged = assign_orders(peaks, 4020.0)
    assert [t.voltage for t in tagged] == [1.0, 3.0, 5.0]
    assert [t.order for t in tagged] == [0, 1, 2]
    assert [t.frequency for t in tagged] == [0.0, 4020.0, 8040.0]


def test_fit_branch_recovers_cubic():
    coefficients = [100.0, 2500.0, 30.0, -1.5]
    v = np.linspace(0.0, 10.0, 11)
    f = np.polynomial.polynomial.polyval(v, coefficients)
    tagged = [TaggedPeak(float(a), i, float(b)) for i, (a, b) in enumerate(zip(v, f))]
    fit = fit_branch(tagged)
    np.testing.assert_allclose(fit.coefficients, coefficients, rtol=1e-6)
    assert fit.v_min == 0.0
    assert fit.v_max == 10.0
    assert fit.max_residual < 1e-6


def test_fit_branch_needs_four_points():
    tagged = [TaggedPeak(float(i), i, 4020.0 * i) for i in range(3)]
    with pytest.raises(InsufficientPoints):
        fit_branch(tagged)


def test_fit_branch_non_monotone():
    v = np.linspace(0.0, 5.0, 6)
    tagged = [
        TaggedPeak(float(a), i, float(1000 * (a - 2.5) ** 2)) for i, a in enumerate(v)
    ]
    with pytest.raises(NonMonotone):
        fit_branch(tagged)


def test_calibrate_both_branches(pzt, etalon):
    traces = [simulate_calibration_trace(pzt, etalon, branch=b) for b in Branch]
    hmap = calibrate(traces, etalon.fsr)
    truth = pzt.to_map(etalon.fsr)
    assert set(hmap.branches) == {Branch.UP, Branch.DOWN}
    for branch in Branch:
        fit, true_fit = hmap.fit_for(branch), truth.fit_for(branch)
        assert len(fit.residuals) == 7
        v = np.linspace(fit.v_min, fit.v_max, 200)
        assert np.max(np.abs(fit(v) - true_fit(v))) < 1.0


def test_calibration_round_trip_over_seeds(pzt, etalon):
    """0.2 % multiplicative noise keeps the map within 0.5 % of an FSR."""
    start = time.perf_counter()
    truth = pzt.to_map(etalon.fsr)
    worst = 0.0
    for seed in range(100):
        for i, branch in enumerate(Branch):
            trace = simulate_calibration_trace(
                pzt, etalon, branch=branch, noise=0.002, seed=[seed, i]
            )
            fit = calibrate_trace(trace, etalon.fsr)
            true_fit = truth.fit_for(branch)
            lo = max(fit.v_min, true_fit.v_min)
            hi = min(fit.v_max, true_fit.v_max)
            v = np.linspace(lo, hi, 200)
            worst = max(worst, float(np.max(np.abs(fit(v) - true_fit(v)))))
    assert worst < 0.005 * etalon.fsr
    assert time.perf_counter() - start < 10.0


def test_additive_noise_model(pzt, etalon):
    trace = simulate_calibration_trace(
        pzt, etalon, noise=0.01, noise_model="additive", seed=3
    )
    assert len(find_peaks(trace)) == 7
    with pytest.raises(ValidationError):
        simulate_calibration_trace(pzt, etalon, noise=0.01, noise_model="pink")


def test_voltage_frequency_inverse(model_map):
    for branch in Branch:
        fit = model_map.fit_for(branch)
        for f in (10.0, 5000.0, 24000.0):
            v = frequency_to_voltage(model_map, f, branch)
            assert voltage_to_frequency(model_map, v, branch) == pytest.approx(
                f, abs=1e-6
            )
        assert fit.v_min <= frequency_to_voltage(model_map, 100.0, branch) <= fit.v_max


def test_out_of_calibrated_range(model_map):
    fit = model_map.fit_for(Branch.UP)
    with pytest.raises(OutOfCalibratedRange):
        voltage_to_frequency(model_map, fit.v_max + 1.0, Branch.UP)
    with pytest.raises(OutOfCalibratedRange):
        voltage_to_frequency(model_map, np.array([fit.v_min - 1.0]), Branch.UP)
    with pytest.raises(OutOfCalibratedRange):
        frequency_to_voltage(model_map, -10.0, Branch.UP)


def test_missing_branch():
    hmap = HysteresisMap(fsr=4020.0)
    with pytest.raises(BranchMismatch):
        hmap.fit_for(Branch.DOWN)


def test_branches_must_span_equal_orders():
    up = BranchFit((0.0, 1000.0, 0.0, 0.0), 0.0, 4.02 * 6)
    down = BranchFit((0.0, 1000.0, 0.0, 0.0), 0.0, 4.02 * 5)
    hmap = HysteresisMap(fsr=4020.0).with_branch(Branch.UP, up)
    with pytest.raises(CalibrationError):
        hmap.with_branch(Branch.DOWN, down)


def test_calibrate_merges_into_base(pzt, etalon, model_map):
    trace = simulate_calibration_trace(pzt, etalon, branch=Branch.UP)
    base = HysteresisMap(
        fsr=etalon.fsr, branches={Branch.DOWN: model_map.fit_for(Branch.DOWN)}
    )
    merged = calibrate([trace], etalon.fsr, base=base)
    assert set(merged.branches) == {Branch.UP, Branch.DOWN}
    assert merged.fit_for(Branch.DOWN) == model_map.fit_for(Branch.DOWN)
    with pytest.raises(CalibrationError):
        calibrate([trace], 4000.0, base=base)


def test_fit_branch_finds_dip_between_peaks():
    # increasing at every peak, but the cubic turns back for about 0.1 V at 2.5 V
    coefficients = P.polymul([-2.5, 1.0], P.polymul([-2.5, 1.0], [-2.5, 1.0]))
    coefficients = P.polysub(coefficients, [-0.025, 0.01]) * 1000.0
    v = np.linspace(0.0, 5.0, 6)
    f = P.polyval(v, coefficients)
    assert np.all(np.diff(f) > 0)
    assert np.all(P.polyval(v, P.polyder(coefficients)) > 0)

    tagged = [TaggedPeak(float(a), i, float(b)) for i, (a, b) in enumerate(zip(v, f))]
    with pytest.raises(NonMonotone):
        fit_branch(tagged)


def test_branches_differ_inside_the_loop(pzt, etalon):
    traces = [
        simulate_calibration_trace(pzt, etalon, branch=b, noise=0.002, seed=[4, i])
        for i, b in enumerate(Branch)
    ]
    hmap = calibrate(traces, etalon.fsr)
    middle = (pzt.v_min + pzt.v_max) / 2
    up = voltage_to_frequency(hmap, middle, Branch.UP)
    down = voltage_to_frequency(hmap, middle, Branch.DOWN)
    assert down - up == pytest.approx(pzt.opening, abs=0.01 * etalon.fsr)


@pytest.mark.parametrize("branch", list(Branch))
def test_consecutive_peaks_one_fsr_apart(pzt, etalon, branch):
    trace = simulate_calibration_trace(pzt, etalon, branch=branch, noise=0.002, seed=9)
    tagged = assign_orders(find_peaks(trace), etalon.fsr)
    fit = fit_branch(tagged)
    assert fit.max_residual < 0.005 * etalon.fsr

    steps = np.diff([fit(p.voltage) for p in tagged])
    assert len(steps) == 6
    np.testing.assert_allclose(steps, etalon.fsr, atol=2 * fit.max_residual + 1e-9)


def test_maps_agree_across_noise_seeds(pzt, etalon):
    bound = 0.005 * etalon.fsr
    maps = [
        calibrate(
            [
                simulate_calibration_trace(
                    pzt, etalon, branch=b, noise=0.002, seed=[seed, i]
                )
                for i, b in enumerate(Branch)
            ],
            etalon.fsr,
        )
        for seed in (11, 12)
    ]
    for branch in Branch:
        a, b = (m.fit_for(branch) for m in maps)
        assert max(a.max_residual, b.max_residual) < bound
        v = np.linspace(max(a.v_min, b.v_min), min(a.v_max, b.v_max), 200)
        assert np.max(np.abs(a(v) - b(v))) < 2 * bound


def test_find_peaks_ignores_bump_on_a_pedestal():
    v = np.linspace(0.0, 10.0, 4000)
    power = sum(1 / (1 + ((v - c) / 0.05) ** 2) for c in (2.0, 5.0, 8.0))
    # tops out above half the global maximum, but rises little from the pedestal
    power += 0.6 * np.exp(-((v - 6.5) ** 2) / 2) + 0.2 / (1 + ((v - 6.5) / 0.05) ** 2)
    peaks = find_peaks(CalibrationTrace(v, power, Branch.UP))
    assert [round(p.voltage, 1) for p in peaks] == [2.0, 5.0, 8.0]
