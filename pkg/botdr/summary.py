"""Round-trip metrics: retrieved profile against the configured fiber."""
import logging
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from botdr.data import AggregateStats
from botdr.retrieval import RetrievedProfile
from botdr.scan_engine import FiberProfile, InstrumentConfig

logger = logging.getLogger("botdr.summary")


@dataclass
class SegmentSummary:
    index: int
    start: float
    end: float
    temperature: float
    strain: float
    bins: List[int] = field(default_factory=list)
    temperature_hat: AggregateStats = field(default_factory=AggregateStats)
    strain_hat: AggregateStats = field(default_factory=AggregateStats)
    temperature_error: AggregateStats = field(default_factory=AggregateStats)
    strain_error: AggregateStats = field(default_factory=AggregateStats)


@dataclass
class BoundarySummary:
    configured: float
    located: float
    quantity: str

    @property
    def error(self) -> float:
        return self.located - self.configured


@dataclass
class RoundtripSummary:
    segments: List[SegmentSummary]
    boundaries: List[BoundarySummary]
    accepted_bins: int
    flagged_bins: int


def _gate_support(cfg: InstrumentConfig, n_bins: int) -> np.ndarray:
    """Range interval feeding each bin, [n_bins x 2] in m."""
    dt = cfg.bin_width * 1e-9
    v = cfg.group_velocity
    t0 = np.arange(n_bins) * dt
    if cfg.smear_pulse:
        lo = v * (t0 - cfg.pulse_duration * 1e-9) / 2
    else:
        lo = v * (t0 + dt / 2) / 2
    hi = v * (t0 + dt) / 2 if cfg.smear_pulse else lo
    return np.column_stack([lo, hi])


def segment_bins(
    profile: FiberProfile, cfg: InstrumentConfig, n_bins: int
) -> List[List[int]]:
    """Bins whose gate lies wholly inside one segment, per segment.

    Gates reaching past the fiber end are left out, those starting before
    the fiber input are not.
    """
    edges = profile.boundaries
    support = _gate_support(cfg, n_bins)
    support[:, 0] = np.maximum(support[:, 0], 0.0)
    members: List[List[int]] = [[] for _ in profile.segments]
    for i, (lo, hi) in enumerate(support):
        if lo >= profile.total_length:
            break
        for k in range(len(profile.segments)):
            if edges[k] <= lo and hi <= edges[k + 1]:
                members[k].append(i)
                break
    return members


def locate_boundary(z: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares single change point, returned midway between bins."""
    z_arr = np.asarray(z, dtype=float)
    v_arr = np.asarray(values, dtype=float)
    keep = np.isfinite(v_arr)
    z_arr, v_arr = z_arr[keep], v_arr[keep]
    if len(v_arr) < 2:
        raise ValueError("at least two finite values are needed")

    best, best_cost = 1, np.inf
    for split in range(1, len(v_arr)):
        left, right = v_arr[:split], v_arr[split:]
        cost = np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2)
        if cost < best_cost:
            best, best_cost = split, cost
    return float((z_arr[best - 1] + z_arr[best]) / 2)


def summarize_roundtrip(
    profile: FiberProfile, cfg: InstrumentConfig, retrieved: RetrievedProfile
) -> RoundtripSummary:
    rows = {row.bin_index: row for row in retrieved.rows}
    edges = profile.boundaries
    members = segment_bins(profile, cfg, len(retrieved.rows))

    segments = []
    for k, segment in enumerate(profile.segments):
        env = segment.environment
        summary = SegmentSummary(
            index=k,
            start=float(edges[k]),
            end=float(edges[k + 1]),
            temperature=env.temperature,
            strain=env.strain,
        )
        for i in members[k]:
            row = rows[i]
            if row.flags:
                continue
            summary.bins.append(i)
            summary.temperature_hat.update(row.temperature)
            summary.strain_hat.update(row.strain)
            summary.temperature_error.update(row.temperature - env.temperature)
            summary.strain_error.update(row.strain - env.strain)
        segments.append(summary)

    accepted = retrieved.accepted()
    z = np.array([row.range_m for row in accepted])
    boundaries = []
    for k in range(1, len(profile.segments)):
        before, after = profile.segments[k - 1], profile.segments[k]
        use_strain = retrieved.inversion == "strain" or (
            retrieved.inversion == "joint"
            and before.environment.temperature == after.environment.temperature
        )
        quantity = "strain" if use_strain else "temperature"
        lo = (edges[k - 1] + edges[k]) / 2
        hi = (edges[k] + edges[k + 1]) / 2
        window = (z >= lo) & (z <= hi)
        if np.count_nonzero(window) < 2:
            logger.warning("too few accepted bins near the boundary at %g m", edges[k])
            continue
        values = np.array([getattr(row, quantity) for row in accepted])
        boundaries.append(
            BoundarySummary(
                configured=float(edges[k]),
                located=locate_boundary(z[window], values[window]),
                quantity=quantity,
            )
        )

    length = profile.total_length
    flagged = [r for r in retrieved.rows if r.flags and r.range_m <= length]
    return RoundtripSummary(
        segments=segments,
        boundaries=boundaries,
        accepted_bins=len(accepted),
        flagged_bins=len(flagged),
    )
