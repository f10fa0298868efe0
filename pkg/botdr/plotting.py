"""SVG figures of retrieved profiles, fitted spectra and hysteresis maps.

Figures are built on ``matplotlib.figure.Figure`` directly, without pyplot
state, and saved with a fixed hash salt and no date so that the same inputs
give the same bytes.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from botdr.calibration import Branch, HysteresisMap
from botdr.core_model import FpiEtalon
from botdr.retrieval import BinSpectrum, ProfileRow, RetrievedProfile, lorentzian

logger = logging.getLogger("botdr.plotting")

PathLike = Union[str, Path]

HASH_SALT = "botdr"

PROFILE_PANELS = {
    "temperature": ("temperature", "sigma_t", "Temperature (°C)"),
    "strain": ("strain", "sigma_strain", "Strain (µε)"),
    "nu_b": ("nu_b", "sigma_nu", "Brillouin shift (MHz)"),
}


def save_svg(
    fig: Figure,
    path: PathLike,
    config_hash: str = "",
    seed: Optional[int] = None,
) -> Path:
    path = Path(path)
    description = f"config_hash={config_hash} seed={'' if seed is None else seed}"
    with matplotlib.rc_context({"svg.hashsalt": HASH_SALT}):
        fig.savefig(
            path,
            format="svg",
            metadata={"Date": None, "Description": description},
        )
    logger.debug("wrote %s", path)
    return path


def profile_figure(profile: RetrievedProfile, quantity: str) -> Figure:
    value_name, sigma_name, label = PROFILE_PANELS[quantity]
    accepted = profile.accepted()
    z = np.array([row.range_m for row in accepted])
    values = np.array([getattr(row, value_name) for row in accepted])
    sigma = np.array([getattr(row, sigma_name) for row in accepted])

    fig = Figure(figsize=(8, 4))
    ax = fig.add_subplot()
    if len(z):
        ax.fill_between(z, values - sigma, values + sigma, alpha=0.25, linewidth=0)
        ax.plot(z, values, linewidth=1)
    ax.set_xlabel("Range (m)")
    ax.set_ylabel(label)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_profile(
    profile: RetrievedProfile,
    out_dir: PathLike,
    config_hash: str = "",
    seed: Optional[int] = None,
) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        save_svg(
            profile_figure(profile, quantity),
            out_dir / f"{quantity}.svg",
            config_hash,
            seed,
        )
        for quantity in PROFILE_PANELS
    ]


def select_bins(profile: RetrievedProfile, count: int = 4) -> List[int]:
    """Evenly spread accepted bins."""
    accepted = [row.bin_index for row in profile.accepted()]
    if len(accepted) <= count:
        return accepted
    picks = np.linspace(0, len(accepted) - 1, count).round().astype(int)
    return [accepted[i] for i in picks]


def _curve(row: ProfileRow, etalon: FpiEtalon, nu: np.ndarray) -> np.ndarray:
    if row.fit is not None:
        return row.fit.evaluate(nu)
    # rows read back from CSV carry no offset
    return lorentzian(nu, row.amplitude, row.nu_b, row.omega_b + etalon.omega_fpi, 0.0)


def spectra_figure(
    profile: RetrievedProfile,
    bins: Sequence[int],
    etalon: FpiEtalon,
    spectra: Optional[Dict[int, BinSpectrum]] = None,
) -> Figure:
    rows = {row.bin_index: row for row in profile.rows}
    fig = Figure(figsize=(8, 2.5 * max(len(bins), 1)))
    axes = fig.subplots(max(len(bins), 1), 1, sharex=True, squeeze=False)[:, 0]
    for ax, b in zip(axes, bins):
        row = rows[b]
        if spectra and b in spectra:
            spec = spectra[b]
            nu = np.linspace(spec.frequencies[0], spec.frequencies[-1], 400)
            ax.plot(spec.frequencies, spec.signal, "o", markersize=3, label="counts")
        else:
            width = row.omega_b + etalon.omega_fpi
            nu = np.linspace(row.nu_b - 4 * width, row.nu_b + 4 * width, 400)
        ax.plot(nu, _curve(row, etalon, nu), linewidth=1, label="fit")
        ax.set_title(f"bin {b}, z = {row.range_m:.0f} m", fontsize=9)
        ax.set_ylabel("Counts")
    axes[-1].set_xlabel("Frequency (MHz)")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    return fig


def plot_spectra(
    profile: RetrievedProfile,
    path: PathLike,
    etalon: FpiEtalon,
    bins: Optional[Sequence[int]] = None,
    spectra: Optional[Dict[int, BinSpectrum]] = None,
    config_hash: str = "",
    seed: Optional[int] = None,
) -> Path:
    bins = list(bins) if bins is not None else select_bins(profile)
    fig = spectra_figure(profile, bins, etalon, spectra)
    return save_svg(fig, path, config_hash, seed)


def hysteresis_figure(hmap: HysteresisMap) -> Figure:
    fig = Figure(figsize=(6, 4))
    ax = fig.add_subplot()
    for branch in (Branch.UP, Branch.DOWN):
        if branch not in hmap.branches:
            continue
        fit = hmap.branches[branch]
        v = np.linspace(fit.v_min, fit.v_max, 400)
        ax.plot(v, fit(v) / 1000, label=f"{branch.value} branch")
    ax.set_xlabel("PZT voltage (V)")
    ax.set_ylabel("Relative frequency (GHz)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return fig


def plot_hysteresis(
    hmap: HysteresisMap,
    path: PathLike,
    config_hash: str = "",
    seed: Optional[int] = None,
) -> Path:
    return save_svg(hysteresis_figure(hmap), path, config_hash, seed)
