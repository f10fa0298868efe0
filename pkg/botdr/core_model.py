"""Spectral physics of the Brillouin line seen through a scanning Fabry-Perot.

All frequencies are in MHz, temperatures in degrees Celsius and strains in
microstrain. Functions accept scalars or numpy arrays for the frequency
argument and broadcast.
"""
import logging
import math
import numbers
from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np

from botdr.errors import IllConditioned, NonPhysicalWidth, ValidationError

logger = logging.getLogger("botdr.core_model")

ArrayLike = Union[float, np.ndarray]


class LineKind(Enum):
    STOKES = "stokes"
    ANTI_STOKES = "anti_stokes"


@dataclass(frozen=True)
class BrillouinLine:
    g0: float
    nu_b: float
    omega_b: float

    def __post_init__(self) -> None:
        if not self.g0 >= 0:
            raise ValidationError("g0", "amplitude must be >= 0")
        if not self.nu_b > 0:
            raise ValidationError("nu_b", "shift must be > 0")
        if not self.omega_b > 0:
            raise ValidationError("omega_b", "half-width must be > 0")


@dataclass(frozen=True)
class FpiEtalon:
    fsr: float = 4020.0
    omega_fpi: float = 60.0
    insertion_loss_db: float = 2.25
    comb_orders: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.omega_fpi < self.fsr / 2:
            raise ValidationError("omega_fpi", "must satisfy 0 < omega_fpi < fsr/2")
        if not self.insertion_loss_db >= 0:
            raise ValidationError("insertion_loss_db", "must be >= 0")
        if int(self.comb_orders) != self.comb_orders or self.comb_orders < 0:
            raise ValidationError("comb_orders", "must be a non-negative integer")

    @property
    def transmission_factor(self) -> float:
        return float(10 ** (-self.insertion_loss_db / 10))

    def _orders(self) -> np.ndarray:
        return np.arange(-self.comb_orders, self.comb_orders + 1)


@dataclass(frozen=True)
class SensitivityModel:
    nu_ref: float = 10850.0
    omega_ref: float = 15.0
    t_ref: float = 20.0
    c_nu_t: float = 1.0
    c_nu_e: float = 0.05
    c_w_t: float = 0.1
    c_w_e: float = 0.001
    max_condition: float = 1e6

    def __post_init__(self) -> None:
        if not self.nu_ref > 0:
            raise ValidationError("nu_ref", "must be > 0")
        if not self.omega_ref > 0:
            raise ValidationError("omega_ref", "must be > 0")
        if not self.max_condition > 1:
            raise ValidationError("max_condition", "must be > 1")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.c_nu_t, self.c_nu_e], [self.c_w_t, self.c_w_e]])

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def check_invertible(self) -> None:
        cond = self.condition_number
        if not np.isfinite(cond) or cond > self.max_condition:
            raise IllConditioned(
                f"sensitivity matrix condition number {cond:.3g} exceeds "
                f"{self.max_condition:.3g}"
            )


@dataclass(frozen=True)
class Environment:
    temperature: float
    strain: float = 0.0

    def __post_init__(self) -> None:
        for name in ("temperature", "strain"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, numbers.Real):
                raise ValidationError(name, f"expected a number, got {value!r}")
            if not math.isfinite(value):
                raise ValidationError(name, "must be finite")
            object.__setattr__(self, name, float(value))


def eval_brillouin(line: BrillouinLine, nu: ArrayLike) -> ArrayLike:
    return line.g0 / (1 + (np.asarray(nu) - line.nu_b) ** 2 / line.omega_b**2)


def eval_fpi(etalon: FpiEtalon, nu: ArrayLike) -> ArrayLike:
    """Interferometer transmittance at offset ``nu`` from a transmission peak.

    Insertion loss is not included, see ``FpiEtalon.transmission_factor``.
    """
    nu = np.asarray(nu, dtype=float)
    if etalon.comb_orders == 0:
        return 1 / (1 + nu**2 / etalon.omega_fpi**2)
    offsets = etalon._orders() * etalon.fsr
    shifted = nu[..., np.newaxis] - offsets
    total = np.sum(1 / (1 + shifted**2 / etalon.omega_fpi**2), axis=-1)
    return np.minimum(total, 1.0)


def eval_transmission(
    line: BrillouinLine, etalon: FpiEtalon, nu_center: ArrayLike
) -> ArrayLike:
    """Brillouin line convolved with the interferometer passband.

    The amplitude is ``line.g0``; it absorbs every scale factor of the true
    convolution, only the Lorentzian shape with half-width
    ``omega_fpi + omega_b`` is physics.
    """
    nu_center = np.asarray(nu_center, dtype=float)
    width = etalon.omega_fpi + line.omega_b
    if etalon.comb_orders == 0:
        return line.g0 / (1 + (nu_center - line.nu_b) ** 2 / width**2)
    offsets = etalon._orders() * etalon.fsr
    detuning = nu_center[..., np.newaxis] + offsets - line.nu_b
    return line.g0 * np.sum(1 / (1 + detuning**2 / width**2), axis=-1)


def line_from_environment(
    model: SensitivityModel, env: Environment, g0: float = 1.0
) -> BrillouinLine:
    d_t = env.temperature - model.t_ref
    nu_b = model.nu_ref + model.c_nu_t * d_t + model.c_nu_e * env.strain
    omega_b = model.omega_ref + model.c_w_t * d_t + model.c_w_e * env.strain
    if omega_b <= 0:
        raise NonPhysicalWidth(
            f"half-width {omega_b:.4g} MHz at T={env.temperature} C, "
            f"strain={env.strain} ue is outside the linear range"
        )
    if nu_b <= 0:
        raise NonPhysicalWidth(f"Brillouin shift {nu_b:.4g} MHz is not positive")
    return BrillouinLine(g0=g0, nu_b=nu_b, omega_b=omega_b)


def environment_from_line(model: SensitivityModel, line: BrillouinLine) -> Environment:
    model.check_invertible()
    rhs = np.array([line.nu_b - model.nu_ref, line.omega_b - model.omega_ref])
    d_t, strain = np.linalg.solve(model.matrix, rhs)
    return Environment(temperature=float(model.t_ref + d_t), strain=float(strain))


def environment_covariance(
    model: SensitivityModel, cov_nu_omega: np.ndarray
) -> np.ndarray:
    """Covariance of (T, strain) given the covariance of (nu_b, omega_b)."""
    model.check_invertible()
    inverse = np.linalg.inv(model.matrix)
    return inverse @ np.asarray(cov_nu_omega, dtype=float) @ inverse.T


def temperature_from_shift(
    model: SensitivityModel, nu_b: float, strain: float = 0.0, var_nu: float = 0.0
) -> Tuple[float, float]:
    """Temperature and its variance from the shift alone, strain known."""
    if model.c_nu_t == 0:
        raise IllConditioned("c_nu_t is zero, the shift carries no temperature")
    d_t = (nu_b - model.nu_ref - model.c_nu_e * strain) / model.c_nu_t
    return model.t_ref + d_t, var_nu / model.c_nu_t**2


def strain_from_shift(
    model: SensitivityModel, nu_b: float, temperature: float, var_nu: float = 0.0
) -> Tuple[float, float]:
    """Strain and its variance from the shift alone, temperature known."""
    if model.c_nu_e == 0:
        raise IllConditioned("c_nu_e is zero, the shift carries no strain")
    d_t = temperature - model.t_ref
    strain = (nu_b - model.nu_ref - model.c_nu_t * d_t) / model.c_nu_e
    return strain, var_nu / model.c_nu_e**2
