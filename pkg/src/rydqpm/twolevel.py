"""Exact propagation of one ``pp <-> ss'`` channel under piecewise-constant detuning.

The single-zone propagator is the closed-form transformation

    U(E, T) = [[cos(phi/2) - i (E/G) sin(phi/2),  i (2V/G)  sin(phi/2)],
               [i (2V*/G) sin(phi/2),             cos(phi/2) + i (E/G) sin(phi/2)]]

with ``G = sqrt(E**2 + 4|V|**2)`` and ``phi = 2 pi G T``. For the pair
Hamiltonian ``H = [[0, V], [V*, E]]`` this equals
``exp(+2 pi i (H - E/2) T) = exp(-i pi E T) * exp(-2 pi i H T)^dagger``: the
phase convention differs from the Schrodinger propagator by a global phase
and Hermitian conjugation, and every population is identical.

Detuning jumps are instantaneous; a sequence is the ordered product of zone
propagators with the earliest zone applied first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError, OutOfRegimeError
from .pair import generalized_rabi
from .records import write_table

PROTOCOLS = ("truncate", "rescale")
QPM_VALIDITY_LIMIT = 0.1


@dataclass(frozen=True)
class TransferMatrix2:
    u11: complex
    u12: complex
    u21: complex
    u22: complex

    @classmethod
    def identity(cls):
        return cls(1 + 0j, 0j, 0j, 1 + 0j)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=complex)
        return cls(complex(a[0, 0]), complex(a[0, 1]), complex(a[1, 0]), complex(a[1, 1]))

    def as_array(self):
        return np.array([[self.u11, self.u12], [self.u21, self.u22]], dtype=complex)

    def __matmul__(self, other: "TransferMatrix2") -> "TransferMatrix2":
        return TransferMatrix2(
            self.u11 * other.u11 + self.u12 * other.u21,
            self.u11 * other.u12 + self.u12 * other.u22,
            self.u21 * other.u11 + self.u22 * other.u21,
            self.u21 * other.u12 + self.u22 * other.u22,
        )

    def apply(self, c_pp, c_ss):
        return self.u11 * c_pp + self.u12 * c_ss, self.u21 * c_pp + self.u22 * c_ss

    def unitarity_error(self):
        a = self.as_array()
        return float(np.max(np.abs(a.conj().T @ a - np.eye(2))))

    @property
    def transfer(self):
        """``|u21|**2``, the ``pp -> ss'`` probability from a pure ``pp`` start."""
        return abs(self.u21) ** 2


@dataclass(frozen=True)
class PulseSequence:
    """Ordered ``(detuning MHz, duration us)`` zones."""

    zones: tuple

    def __post_init__(self):
        zones = tuple((float(e), float(d)) for e, d in self.zones)
        if not zones:
            raise InvalidInputError("a pulse sequence needs at least one zone")
        for e, d in zones:
            if not math.isfinite(e):
                raise InvalidInputError(f"zone detuning must be finite, got {e}")
            if not (math.isfinite(d) and d > 0):
                raise InvalidInputError(f"zone duration must be positive, got {d}")
        object.__setattr__(self, "zones", zones)

    @classmethod
    def constant(cls, E, T):
        return cls(((E, T),))

    @property
    def total_time(self):
        return math.fsum(d for _, d in self.zones)

    @property
    def detunings(self):
        return np.array([e for e, _ in self.zones])

    @property
    def durations(self):
        return np.array([d for _, d in self.zones])

    @property
    def boundaries(self):
        """Zone end times, starting with 0."""
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def rescaled(self, T) -> "PulseSequence":
        """Same zone pattern stretched or compressed to total time ``T``."""
        if not (T > 0):
            raise InvalidInputError(f"rescaled total time must be positive, got {T}")
        f = T / self.total_time
        return PulseSequence(tuple((e, d * f) for e, d in self.zones))

    def zone_durations(self, times, protocol="truncate"):
        """Time spent in each zone when the evolution is read out at ``times``.

        Returns an array of shape ``(n_zones, n_times)``.

        ``"truncate"`` follows one sequence and stops at each time, so a
        partially completed zone contributes its elapsed part.
        ``"rescale"`` runs, for every time ``t``, a separate sequence with the
        same pattern stretched to total length ``t``; this is how a QPM scan
        over total interaction time is acquired.
        """
        times = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(~np.isfinite(times)) or np.any(times < 0):
            raise InvalidInputError("read-out times must be finite and non-negative")
        if protocol == "truncate":
            total = self.total_time
            if np.any(times > total * (1 + 1e-12)):
                raise InvalidInputError(
                    f"read-out time {times.max()} exceeds sequence length {total}"
                )
            starts = self.boundaries[:-1]
            return np.clip(times[None, :] - starts[:, None], 0.0, self.durations[:, None])
        if protocol == "rescale":
            frac = self.durations / self.total_time
            return frac[:, None] * times[None, :]
        raise InvalidInputError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def _check_time(T):
    T = float(T)
    if not math.isfinite(T) or T < 0:
        raise InvalidInputError(f"interaction time must be finite and non-negative, got {T}")
    return T


def _zone_entries(E, V, t):
    """Closed-form propagator entries, broadcasting over ``V`` and ``t``."""
    V = np.asarray(V, dtype=complex)
    gamma = generalized_rabi(E, V)
    half = np.pi * gamma * t
    c = np.cos(half)
    s = np.sin(half)
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(gamma > 0, E / np.where(gamma > 0, gamma, 1.0), 0.0)
        b = np.where(gamma > 0, 2.0 / np.where(gamma > 0, gamma, 1.0), 0.0)
    bs = b * s
    return c - 1j * a * s, 1j * V * bs, 1j * np.conj(V) * bs, c + 1j * a * s


def propagator(E, V, T) -> TransferMatrix2:
    """Constant-detuning transformation ``U(E, T)`` for detuning ``E`` and coupling ``V``."""
    T = _check_time(T)
    u11, u12, u21, u22 = _zone_entries(float(E), complex(V), T)
    return TransferMatrix2(complex(u11), complex(u12), complex(u21), complex(u22))


def transfer_probability(E, V, T):
    """``(4|V|^2 / G^2) sin^2(pi G T)``; zero when ``E = V = 0``.

    Broadcasts over array arguments.
    """
    T = np.asarray(T, dtype=float)
    if np.any(~np.isfinite(T)) or np.any(T < 0):
        raise InvalidInputError("interaction time must be finite and non-negative")
    v2 = np.square(np.abs(V))
    gamma2 = np.square(E) + 4.0 * v2
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(gamma2 > 0, 4.0 * v2 / np.where(gamma2 > 0, gamma2, 1.0), 0.0)
    p = amp * np.sin(np.pi * np.sqrt(gamma2) * T) ** 2
    return p if np.ndim(p) else float(p)


def qpm_sequence(E, T, N) -> PulseSequence:
    """``N`` zones of length ``T/N`` with detunings ``+E, -E, +E, ...``."""
    if int(N) != N or N < 2 or N % 2:
        raise InvalidInputError(f"QPM sequences need an even number of zones N >= 2, got {N}")
    if not (T > 0):
        raise InvalidInputError(f"total time must be positive, got {T}")
    N = int(N)
    return PulseSequence(tuple(((E if k % 2 == 0 else -E), T / N) for k in range(N)))


def sequence_propagator(seq: PulseSequence, V) -> TransferMatrix2:
    """Ordered product of zone propagators, earliest zone rightmost."""
    total = TransferMatrix2.identity()
    for e, d in seq.zones:
        total = propagator(e, V, d) @ total
    return total


def sequence_amplitudes(seq: PulseSequence, V, times, protocol="truncate"):
    """Amplitudes ``(C_pp, C_ss')`` for many couplings and read-out times.

    Starts from ``pp``. Returns two complex arrays of shape
    ``(len(V), len(times))``.
    """
    V = np.atleast_1d(np.asarray(V, dtype=complex))[:, None]
    durations = seq.zone_durations(times, protocol)
    shape = (V.shape[0], durations.shape[1])
    c_pp = np.ones(shape, dtype=complex)
    c_ss = np.zeros(shape, dtype=complex)
    for (e, _), tau in zip(seq.zones, durations):
        u11, u12, u21, u22 = _zone_entries(e, V, tau[None, :])
        c_pp, c_ss = u11 * c_pp + u12 * c_ss, u21 * c_pp + u22 * c_ss
    return c_pp, c_ss


def qpm_validity(E, V, T, N):
    """``2^(N/2) (2|V|/G_N)^2 sin^2(phi_N/2)`` with ``G_N = G/N``."""
    gamma_n = generalized_rabi(E, V) / N
    if gamma_n == 0:
        return 0.0
    return 2.0 ** (N / 2) * (2 * abs(V) / gamma_n) ** 2 * math.sin(math.pi * gamma_n * T) ** 2


def _qpm_approx(E, V, T, N):
    gamma_n = float(generalized_rabi(E, V)) / N
    if gamma_n == 0:
        return 0.0
    return 4 * abs(V) ** 2 / gamma_n**2 * math.sin(math.pi * gamma_n * T) ** 2


def qpm_approx_transfer(E, V, T, N, check=True):
    """Large-detuning estimate of ``N``-zone QPM transfer.

    The constant-detuning formula with ``G`` replaced by ``G/N``. With
    ``check`` set, raises :class:`OutOfRegimeError` unless the validity
    expression (:func:`qpm_validity`) is below 0.1.
    """
    if int(N) != N or N < 2 or N % 2:
        raise InvalidInputError(f"N must be even and >= 2, got {N}")
    T = _check_time(T)
    if check:
        validity = qpm_validity(E, V, T, N)
        if validity >= QPM_VALIDITY_LIMIT:
            raise OutOfRegimeError(
                f"QPM approximation invalid: 2^(N/2)(2V/G_N)^2 sin^2(phi_N/2) = {validity:.3g}"
                f" >= {QPM_VALIDITY_LIMIT}",
                validity,
            )
    return _qpm_approx(E, V, T, int(N))


@dataclass(frozen=True)
class BlochPoint:
    """State ``cos(theta/2)|pp> + exp(i varphi) sin(theta/2)|ss'>``.

    ``boundary_flag`` is -1 just before a detuning jump, +1 just after it and
    0 elsewhere.
    """

    time: float
    theta_b: float
    varphi_b: float
    p_transfer: float
    zone_index: int
    boundary_flag: int = 0


def bloch_trajectory(seq: PulseSequence, V, dt) -> list:
    """Sample the Bloch-sphere path of a pair that starts in ``pp``.

    Each zone is sampled every ``dt`` from its start, plus its exact end.
    Zone interfaces appear twice: once at the end of the earlier zone
    (flag -1) and once at the start of the later one (flag +1).
    The azimuth is unwrapped by continuity along the path; at ``theta = 0``
    it takes its limiting value for a path leaving ``pp``.
    """
    dt = float(dt)
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidInputError(f"dt must be positive, got {dt}")
    if dt > seq.durations.min() * (1 + 1e-12):
        raise InvalidInputError("dt must not exceed the shortest zone duration")
    V = complex(V)

    times, zone_idx, flags, amps = [], [], [], []
    c_pp, c_ss = 1 + 0j, 0j
    t0 = 0.0
    last = len(seq.zones) - 1
    for k, (e, d) in enumerate(seq.zones):
        n_in = int(math.floor(d / dt * (1 + 1e-12)))
        local = dt * np.arange(n_in + 1)
        local = local[local < d * (1 - 1e-12)]
        local = np.append(local, d)
        u11, u12, u21, u22 = _zone_entries(e, V, local)
        a = u11 * c_pp + u12 * c_ss
        b = u21 * c_pp + u22 * c_ss
        for j, tl in enumerate(local):
            flag = 0
            if j == 0 and k > 0:
                flag = 1
            elif j == len(local) - 1 and k < last:
                flag = -1
            times.append(t0 + tl)
            zone_idx.append(k)
            flags.append(flag)
            amps.append((a[j], b[j]))
        c_pp, c_ss = complex(a[-1]), complex(b[-1])
        t0 += d

    a = np.array([x for x, _ in amps])
    b = np.array([y for _, y in amps])
    theta = 2.0 * np.arctan2(np.abs(b), np.abs(a))
    raw = np.angle(b) - np.angle(a)
    start = np.angle(1j * V) if V != 0 else 0.0
    tiny = np.abs(b) < 1e-300
    raw = np.where(tiny, np.nan, raw)
    # carry the previous value through exact zeros of C_ss'
    filled = np.empty_like(raw)
    prev = start
    for i, r in enumerate(raw):
        prev = prev if np.isnan(r) else r
        filled[i] = prev
    varphi = np.unwrap(filled)
    p = np.abs(b) ** 2
    return [
        BlochPoint(float(t), float(th), float(vp), float(pt), int(z), int(f))
        for t, th, vp, pt, z, f in zip(times, theta, varphi, p, zone_idx, flags)
    ]


BLOCH_COLUMNS = ("time_us", "theta", "varphi", "p_transfer", "zone_index", "boundary_flag")


def bloch_columns(points: Iterable[BlochPoint]) -> dict:
    pts = list(points)
    return {
        "time_us": [p.time for p in pts],
        "theta": [p.theta_b for p in pts],
        "varphi": [p.varphi_b for p in pts],
        "p_transfer": [p.p_transfer for p in pts],
        "zone_index": [p.zone_index for p in pts],
        "boundary_flag": [p.boundary_flag for p in pts],
    }


def write_bloch_csv(points: Iterable[BlochPoint], path, header: dict | None = None):
    """Write a trajectory as CSV with a ``#``-prefixed header block."""
    write_table(path, bloch_columns(points), header=header)


def dephasing_phase_spread(seq: PulseSequence, couplings: Sequence) -> list:
    """Spread of accumulated Rabi phase across couplings at each zone boundary.

    Zone-wise model: each coupling accrues ``2 pi G T`` in the detuning
    direction of the first zone. Once the detuning has changed sign, the
    accrual runs at twice that rate, in the direction of the current sign,
    because the path now encircles the pole. For alternating equal zones this
    leaves the spread at every boundary equal to the spread after zone 1.

    Returns ``[(time, max - min), ...]`` starting at ``t = 0``.
    """
    couplings = np.asarray(list(couplings), dtype=complex)
    if couplings.size == 0:
        raise InvalidInputError("at least one coupling is required")
    ref = 1.0 if seq.zones[0][0] >= 0 else -1.0
    phase = np.zeros(couplings.size)
    out = [(0.0, 0.0)]
    t = 0.0
    flipped = False
    for e, d in seq.zones:
        sign = 1.0 if e >= 0 else -1.0
        if sign != ref:
            flipped = True
        weight = 2.0 if flipped else 1.0
        phase = phase + (sign * ref) * weight * 2 * np.pi * generalized_rabi(e, couplings) * d
        t += d
        out.append((t, float(phase.max() - phase.min())))
    return out
