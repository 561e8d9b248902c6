"""Physical constants, unit conversions and density-derived length scales.

Conventions used throughout the package:

* lengths in micrometres, times in microseconds, densities in cm^-3;
* detunings ``E``, couplings ``V`` and Rabi frequencies are ordinary
  frequencies in MHz, and every accumulated phase is ``2*pi*f*t``.
  The factor of ``2*pi`` is applied where a phase is formed and nowhere else.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import InvalidInputError, LinearizationRangeWarning

# a0**3 * (E_h / h) with a0 in um and E_h/h in MHz (CODATA 2018):
#   a0      = 5.29177210903e-11 m  -> 5.29177210903e-5 um
#   E_h / h = 6.579683920502e15 Hz -> 6.579683920502e9 MHz
# A dipole product r1*r2 (in a0^2) at separation R (in um) couples with
# r1*r2 * ATOMIC_TO_MHZ_PER_UM3 / R**3 MHz.
ATOMIC_TO_MHZ_PER_UM3 = 9.750085633376181e-4
HARTREE_IN_MHZ = 6.579683920502e9

CM3_TO_UM3 = 1.0e12
# |F - F0| beyond this the linear detuning map is an extrapolation.
LINEAR_FIELD_RANGE = 0.5


@dataclass(frozen=True)
class PhysicalConstants:
    """Atomic parameters of the 32p + 32p <-> 32s + 33s resonance.

    Attributes
    ----------
    r_ps, r_ps_prime : float
        Radial matrix elements 32p-32s and 32p-33s in atomic units.
    F0 : float
        Resonance field in V/cm.
    detuning_slope : float
        Pair detuning per unit field offset, MHz per (V/cm).
    atomic_to_MHz_per_um3 : float
        Converts ``r1*r2/R**3`` (a0^2 / um^3) to MHz.
    """

    r_ps: float = 964.0
    r_ps_prime: float = 941.0
    F0: float = 11.49
    detuning_slope: float = 170.0
    atomic_to_MHz_per_um3: float = ATOMIC_TO_MHZ_PER_UM3

    def __post_init__(self):
        for name in ("r_ps", "r_ps_prime", "F0", "detuning_slope", "atomic_to_MHz_per_um3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidInputError(f"{name} must be positive and finite, got {value!r}")

    @property
    def dipole_product(self):
        """``r_ps * r_ps_prime`` in a0^2."""
        return self.r_ps * self.r_ps_prime


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class Density:
    """Atom number density in cm^-3."""

    rho: float

    def __post_init__(self):
        if not (math.isfinite(self.rho) and self.rho > 0):
            raise InvalidInputError(f"density must be positive and finite, got {self.rho!r}")

    @property
    def per_um3(self):
        return self.rho / CM3_TO_UM3


def as_density(rho) -> Density:
    if isinstance(rho, Density):
        return rho
    try:
        return Density(float(rho))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise InvalidInputError(f"invalid density {rho!r}") from exc


def _finite(x, name):
    try:
        x = float(x)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} must be a real number, got {x!r}") from exc
    if not math.isfinite(x):
        raise InvalidInputError(f"{name} must be finite, got {x!r}")
    return x


def mhz_to_hartree(f_mhz):
    return f_mhz / HARTREE_IN_MHZ


def hartree_to_mhz(e_hartree):
    return e_hartree * HARTREE_IN_MHZ


def detuning_from_field(F, constants: PhysicalConstants = CONSTANTS) -> float:
    """Pair detuning ``E`` in MHz produced by a static field ``F`` in V/cm.

    Fields more than 0.5 V/cm from resonance still convert, but a
    :class:`LinearizationRangeWarning` is issued.
    """
    F = _finite(F, "field")
    offset = F - constants.F0
    if abs(offset) > LINEAR_FIELD_RANGE:
        warnings.warn(
            f"field {F} V/cm is {abs(offset):.3g} V/cm from resonance; "
            f"linear detuning map is only valid within {LINEAR_FIELD_RANGE} V/cm",
            LinearizationRangeWarning,
            stacklevel=2,
        )
    return constants.detuning_slope * offset


def field_from_detuning(E, constants: PhysicalConstants = CONSTANTS) -> float:
    """Inverse of :func:`detuning_from_field`; returns V/cm."""
    E = _finite(E, "detuning")
    return constants.F0 + E / constants.detuning_slope


def r0_from_density(rho) -> float:
    """Most probable nearest-neighbour separation ``(2 pi rho)^(-1/3)`` in um."""
    n = as_density(rho).per_um3
    return (2.0 * math.pi * n) ** (-1.0 / 3.0)


def r_avg_from_density(rho) -> float:
    """Mean nearest-neighbour separation ``(3 ln2 / (4 pi rho))^(1/3)`` in um."""
    n = as_density(rho).per_um3
    return (3.0 * math.log(2.0) / (4.0 * math.pi * n)) ** (1.0 / 3.0)


def coupling_prefactor(R, constants: PhysicalConstants = CONSTANTS) -> float:
    """``r_ps * r_ps' / R**3`` converted to MHz, for ``R`` in um."""
    R = _finite(R, "separation")
    if R <= 0:
        raise InvalidInputError(f"separation must be positive, got {R}")
    return constants.dipole_product * constants.atomic_to_MHz_per_um3 / R**3
