"""Dipole-dipole coupling of a single Rydberg atom pair in the reduced basis.

Each initial ``pp`` state with electron projections ``(+-3/2, +-3/2)`` couples
to exactly one symmetric ``ss'`` combination, so a pair splits into four
independent two-level channels. The channel is named by the signs of the two
initial ``m_j`` values.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .units import CONSTANTS, PhysicalConstants, coupling_prefactor

SQRT2 = math.sqrt(2.0)


class Channel(enum.IntEnum):
    PlusPlus = 0
    MinusMinus = 1
    PlusMinus = 2
    MinusPlus = 3

    @classmethod
    def from_signs(cls, sign_a: int, sign_b: int) -> "Channel":
        return {
            (1, 1): cls.PlusPlus,
            (-1, -1): cls.MinusMinus,
            (1, -1): cls.PlusMinus,
            (-1, 1): cls.MinusPlus,
        }[(int(sign_a), int(sign_b))]


@dataclass(frozen=True)
class AtomPair:
    """One nearest-neighbour pair.

    ``theta`` is the angle between the internuclear axis and the field axis,
    ``phi`` the azimuth of the internuclear axis about the field.
    """

    R: float
    theta: float
    phi: float = 0.0
    channel: Channel = Channel.PlusPlus

    def __post_init__(self):
        if not (math.isfinite(self.R) and self.R > 0):
            raise InvalidInputError(f"R must be positive, got {self.R!r}")
        if not (0.0 <= self.theta <= math.pi):
            raise InvalidInputError(f"theta must lie in [0, pi], got {self.theta!r}")
        if not (0.0 <= self.phi < 2 * math.pi):
            raise InvalidInputError(f"phi must lie in [0, 2pi), got {self.phi!r}")
        object.__setattr__(self, "channel", Channel(self.channel))


@dataclass(frozen=True)
class PairEigensystem:
    e_plus: float
    e_minus: float
    alpha: float


def channel_coupling(pair: AtomPair, constants: PhysicalConstants = CONSTANTS) -> complex:
    """Coupling ``V`` in MHz between ``pp`` and the symmetric ``ss'`` state."""
    pre = coupling_prefactor(pair.R, constants)
    return complex(_angular(pair.theta, pair.phi, pair.channel) * pre)


def _angular(theta, phi, channel):
    s2 = math.sin(theta) ** 2
    if channel == Channel.PlusPlus:
        return -s2 * complex(math.cos(2 * phi), -math.sin(2 * phi)) / SQRT2
    if channel == Channel.MinusMinus:
        return -s2 * complex(math.cos(2 * phi), math.sin(2 * phi)) / SQRT2
    return complex((s2 - 2.0 / 3.0) / SQRT2)


def channel_couplings(R, theta, phi, channel, constants: PhysicalConstants = CONSTANTS):
    """Vectorised :func:`channel_coupling` over arrays of pair parameters.

    ``channel`` holds integer :class:`Channel` values. Inputs are assumed
    valid; no per-element checks are made.
    """
    R = np.asarray(R, dtype=float)
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    channel = np.asarray(channel)
    pre = constants.dipole_product * constants.atomic_to_MHz_per_um3 / R**3
    s2 = np.sin(theta) ** 2
    rot = np.exp(-2j * phi)
    v_pp = -pre * s2 * rot / SQRT2
    v_pm = pre * (s2 - 2.0 / 3.0) / SQRT2 + 0j
    return np.where(
        channel == Channel.PlusPlus,
        v_pp,
        np.where(channel == Channel.MinusMinus, np.conj(v_pp), v_pm),
    )


def generalized_rabi(E, V):
    """``sqrt(E**2 + 4|V|**2)`` in MHz; works elementwise on arrays."""
    return np.sqrt(np.square(E) + 4.0 * np.square(np.abs(V)))


def pair_eigensystem(E: float, V: complex) -> PairEigensystem:
    """Dressed energies of ``H = [[0, V], [V*, E]]`` and the mixing angle.

    ``alpha`` satisfies ``tan(alpha) = 2|V| / E`` and lies in ``[0, pi]``.
    """
    gamma = float(generalized_rabi(E, V))
    v = abs(V)
    return PairEigensystem(
        e_plus=0.5 * (E + gamma),
        e_minus=0.5 * (E - gamma),
        alpha=math.atan2(2.0 * v, E),
    )


def angle_averaged_coupling(
    R: float,
    channel: Channel,
    convention: str = "isotropic-abs",
    constants: PhysicalConstants = CONSTANTS,
) -> float:
    """Orientation average of the channel coupling at fixed separation, in MHz.

    Parameters
    ----------
    convention : {"isotropic-abs", "uniform-theta-signed"}
        ``"isotropic-abs"`` averages ``|V|`` with ``cos(theta)`` uniform on
        [-1, 1]; this is the package default. ``"uniform-theta-signed"``
        averages the real (``phi = 0``) coupling with ``theta`` uniform on
        [0, pi]; at the most probable separation for 1e9 cm^-3 it gives
        ``|<V++>| ~ 2.0 MHz`` and ``|<V+->| ~ 0.66 MHz``.
    """
    pre = coupling_prefactor(R, constants)
    channel = Channel(channel)
    if convention == "isotropic-abs":
        if channel in (Channel.PlusPlus, Channel.MinusMinus):
            # <sin^2> over the sphere
            return pre * (2.0 / 3.0) / SQRT2
        # <|1/3 - u^2|> for u = cos(theta) uniform; zero crossing at u = 1/sqrt(3)
        return pre * (4.0 / (9.0 * math.sqrt(3.0))) / SQRT2
    if convention == "uniform-theta-signed":
        if channel in (Channel.PlusPlus, Channel.MinusMinus):
            return -pre * 0.5 / SQRT2
        return pre * (0.5 - 2.0 / 3.0) / SQRT2
    raise InvalidInputError(f"unknown averaging convention {convention!r}")
