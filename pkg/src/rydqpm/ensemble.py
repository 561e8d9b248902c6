"""Monte Carlo ensembles of independent atom pairs.

Random frozen gases draw nearest-neighbour separations from
``G(R) = 4 pi rho R^2 exp(-4/3 pi rho R^3)`` through its inverse CDF and
isotropic orientations; ordered arrays draw Gaussian separations at a fixed
polar angle. Every pair evolves as an independent two-level channel.
"""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError, NotApplicableError
from .pair import channel_couplings
from .records import EvolutionRecord
from .rng import (
    STREAM_ORDERED,
    STREAM_PAIRS,
    chunk_generator,
    chunks,
    config_hash,
    ordered_map,
)
from .twolevel import PulseSequence, sequence_amplitudes, transfer_probability
from .units import as_density, r0_from_density

UNIFORM_CHANNELS = (0.25, 0.25, 0.25, 0.25)


def _check_weights(weights):
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise InvalidInputError(f"channel_weights must be four non-negative numbers summing to 1, got {weights}")
    return tuple(float(x) for x in w)


def _check_count(n, name):
    if int(n) != n or n < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {n}")
    return int(n)


@dataclass(frozen=True)
class EnsembleConfig:
    rho: float
    n_samples: int
    seed: int = 0
    channel_weights: tuple = UNIFORM_CHANNELS

    def __post_init__(self):
        object.__setattr__(self, "rho", as_density(self.rho).rho)
        object.__setattr__(self, "n_samples", _check_count(self.n_samples, "n_samples"))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "channel_weights", _check_weights(self.channel_weights))

    def hash(self):
        return config_hash({"kind": "ensemble", **asdict(self)})


@dataclass(frozen=True)
class OrderedConfig:
    r_mean: float
    r_sigma: float
    theta: float
    n_samples: int
    seed: int = 0
    channel_weights: tuple = UNIFORM_CHANNELS

    def __post_init__(self):
        if not (self.r_mean > 0):
            raise InvalidInputError(f"r_mean must be positive, got {self.r_mean}")
        if not (self.r_sigma >= 0):
            raise InvalidInputError(f"r_sigma must be non-negative, got {self.r_sigma}")
        if not (0 <= self.theta <= math.pi):
            raise InvalidInputError(f"theta must lie in [0, pi], got {self.theta}")
        object.__setattr__(self, "n_samples", _check_count(self.n_samples, "n_samples"))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "channel_weights", _check_weights(self.channel_weights))

    def hash(self):
        return config_hash({"kind": "ordered", **asdict(self)})


# ---------------------------------------------------------------- sampling


def sample_nn_distance(rho, rng: np.random.Generator, size=None):
    """Nearest-neighbour separations in um for a random gas of density ``rho``."""
    n = as_density(rho).per_um3
    u = rng.random(size)
    return np.cbrt(-3.0 * np.log1p(-u) / (4.0 * math.pi * n))


def nn_distance_cdf(R, rho):
    """Analytic CDF ``1 - exp(-4/3 pi rho R^3)`` of :func:`sample_nn_distance`."""
    n = as_density(rho).per_um3
    R = np.asarray(R, dtype=float)
    return -np.expm1(-4.0 / 3.0 * math.pi * n * R**3)


def nn_distance_pdf(R, rho):
    n = as_density(rho).per_um3
    R = np.asarray(R, dtype=float)
    return 4 * math.pi * n * R**2 * np.exp(-4.0 / 3.0 * math.pi * n * R**3)


def sample_orientation(rng: np.random.Generator, size=None):
    """Isotropic ``(theta, phi)``: ``cos(theta)`` uniform on [-1, 1], ``phi`` on [0, 2 pi)."""
    cos_t = rng.uniform(-1.0, 1.0, size)
    phi = rng.uniform(0.0, 2 * math.pi, size)
    return np.arccos(cos_t), phi


def sample_channels(rng: np.random.Generator, weights, size=None):
    return rng.choice(4, size=size, p=np.asarray(weights))


def _random_pair_couplings(cfg: EnsembleConfig, chunk):
    index, start, stop = chunk
    rng = chunk_generator(cfg.seed, STREAM_PAIRS, index)
    n = stop - start
    R = sample_nn_distance(cfg.rho, rng, n)
    theta, phi = sample_orientation(rng, n)
    ch = sample_channels(rng, cfg.channel_weights, n)
    return channel_couplings(R, theta, phi, ch)


def _ordered_pair_couplings(cfg: OrderedConfig, chunk):
    index, start, stop = chunk
    rng = chunk_generator(cfg.seed, STREAM_ORDERED, index)
    n = stop - start
    R = rng.normal(cfg.r_mean, cfg.r_sigma, n)
    bad = R <= 0
    while np.any(bad):
        R[bad] = rng.normal(cfg.r_mean, cfg.r_sigma, int(bad.sum()))
        bad = R <= 0
    phi = rng.uniform(0.0, 2 * math.pi, n)
    ch = sample_channels(rng, cfg.channel_weights, n)
    return channel_couplings(R, np.full(n, cfg.theta), phi, ch)


def _couplings_for(cfg, chunk):
    if isinstance(cfg, OrderedConfig):
        return _ordered_pair_couplings(cfg, chunk)
    return _random_pair_couplings(cfg, chunk)


def sample_couplings(cfg, workers=1):
    """All sampled pair couplings (complex MHz) in sample order."""
    parts = ordered_map(functools.partial(_couplings_for, cfg), chunks(cfg.n_samples), workers)
    return np.concatenate(parts)


# ---------------------------------------------------------------- lineshape


@dataclass(eq=False)
class Lineshape:
    detunings: np.ndarray
    transfer: np.ndarray
    stderr: np.ndarray
    metadata: dict

    def __iter__(self):
        return iter(zip(self.detunings.tolist(), self.transfer.tolist()))

    def hwhm(self):
        return half_width_half_max(self.detunings, self.transfer)


def _lineshape_chunk(cfg, T, detunings, chunk):
    V = np.abs(_couplings_for(cfg, chunk))
    p = transfer_probability(detunings[:, None], V[None, :], T)
    return p.sum(axis=1), np.square(p).sum(axis=1)


def lineshape(cfg: EnsembleConfig, T, detunings, workers=1) -> Lineshape:
    """Mean ``pp -> ss'`` transfer after time ``T`` at each detuning."""
    if not (T > 0):
        raise InvalidInputError(f"interaction time must be positive, got {T}")
    detunings = np.asarray(detunings, dtype=float)
    parts = ordered_map(
        functools.partial(_lineshape_chunk, cfg, float(T), detunings), chunks(cfg.n_samples), workers
    )
    s1, s2 = _reduce(parts)
    mean, err = _mean_stderr(s1, s2, cfg.n_samples)
    meta = {"model": "2-atom", "seed": cfg.seed, "config_hash": cfg.hash(), "T_us": float(T)}
    return Lineshape(detunings, mean, err, meta)


def lorentzian(V, detunings):
    """Maximum transfer ``4|V|^2 / (E^2 + 4|V|^2)`` of a single pair."""
    v2 = abs(V) ** 2
    E = np.asarray(detunings, dtype=float)
    return 4 * v2 / (E**2 + 4 * v2)


def half_width_half_max(detunings, values):
    """Half width of a curve peaked at ``E = 0``, by linear interpolation on ``E >= 0``."""
    E = np.asarray(detunings, dtype=float)
    y = np.asarray(values, dtype=float)
    order = np.argsort(E)
    E, y = E[order], y[order]
    keep = E >= 0
    E, y = E[keep], y[keep]
    if E.size < 2 or E[0] != 0:
        raise InvalidInputError("detuning grid must include 0 and positive values")
    half = y[0] / 2
    below = np.nonzero(y < half)[0]
    if below.size == 0:
        raise NotApplicableError("curve never falls to half maximum on the given grid")
    i = below[0]
    return float(np.interp(half, [y[i], y[i - 1]], [E[i], E[i - 1]]))


def percentile_coupling(cfg, q, workers=1):
    """Percentile(s) ``q`` of ``|V|`` over the sampled ensemble, in MHz."""
    qa = np.asarray(q, dtype=float)
    if np.any(~(qa > 0)) or np.any(~(qa < 100)):
        raise InvalidInputError(f"percentiles must lie strictly between 0 and 100, got {q}")
    v = np.abs(sample_couplings(cfg, workers))
    out = np.percentile(v, qa, method="linear")
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------- evolutions


# amplitudes held at once per chunk; long time grids are processed in blocks
_BLOCK_ELEMENTS = 2_000_000


def _evolution_chunk(cfg, seq, times, protocol, chunk):
    V = _couplings_for(cfg, chunk)
    s1 = np.empty(times.size)
    s2 = np.empty(times.size)
    step = max(1, _BLOCK_ELEMENTS // max(V.size, 1))
    for lo in range(0, times.size, step):
        block = slice(lo, lo + step)
        c_pp, _ = sequence_amplitudes(seq, V, times[block], protocol)
        p = np.abs(c_pp) ** 2
        s1[block] = p.sum(axis=0)
        s2[block] = np.square(p).sum(axis=0)
    return s1, s2


def _reduce(parts):
    s1 = np.zeros_like(parts[0][0])
    s2 = np.zeros_like(parts[0][1])
    for a, b in parts:
        s1 = s1 + a
        s2 = s2 + b
    return s1, s2


def _mean_stderr(s1, s2, n):
    mean = s1 / n
    if n < 2:
        return mean, np.zeros_like(mean)
    var = np.maximum(s2 / n - mean**2, 0.0) * n / (n - 1)
    return mean, np.sqrt(var / n)


def _evolve(cfg, seq, times, protocol, workers, model):
    times = np.asarray(times, dtype=float)
    seq.zone_durations(times, protocol)  # validates the grid
    parts = ordered_map(
        functools.partial(_evolution_chunk, cfg, seq, times, protocol), chunks(cfg.n_samples), workers
    )
    s1, s2 = _reduce(parts)
    mean, err = _mean_stderr(s1, s2, cfg.n_samples)
    meta = {
        "model": model,
        "seed": cfg.seed,
        "config_hash": cfg.hash(),
        "protocol": protocol,
        "n_samples": cfg.n_samples,
    }
    return EvolutionRecord(times, mean, meta, p_stderr=err)


def ensemble_evolution(cfg: EnsembleConfig, seq: PulseSequence, times, protocol="truncate", workers=1):
    """Mean ``|C_pp|^2`` of random nearest-neighbour pairs at each time.

    See :meth:`PulseSequence.zone_durations` for the two read-out protocols.
    """
    return _evolve(cfg, seq, times, protocol, workers, "2-atom")


def ordered_array_evolution(cfg: OrderedConfig, seq: PulseSequence, times, protocol="truncate", workers=1):
    """As :func:`ensemble_evolution` for Gaussian-spread pairs at fixed ``theta``."""
    return _evolve(cfg, seq, times, protocol, workers, "ordered")


def mean_abs_coupling(cfg, workers=1):
    """``<|V|>`` over the sampled ensemble, MHz."""
    return float(np.mean(np.abs(sample_couplings(cfg, workers))))


def typical_coupling(rho):
    """Coupling scale ``r_ps r_ps' / R0^3`` at the most probable separation."""
    from .units import coupling_prefactor

    return coupling_prefactor(r0_from_density(rho))


# ---------------------------------------------------------------- oscillation analysis


def _noise_floor(record: EvolutionRecord):
    if record.p_stderr is None or record.p_stderr.size == 0:
        return 0.0
    return 3.0 * float(np.max(record.p_stderr))


def _extrema(record: EvolutionRecord, min_swing=None):
    """Indices of turning points, with the first sample always included.

    A turning point is accepted only once the curve has moved back by more
    than ``min_swing`` from it (hysteresis), so Monte Carlo noise does not
    register as oscillation. The default threshold is three times the
    largest standard error in the record, or zero for exact records.
    """
    p = record.p_population
    tol = _noise_floor(record) if min_swing is None else float(min_swing)
    turns = [0]
    direction = 0
    ext = 0
    for i in range(1, p.size):
        if direction == 0:
            if abs(p[i] - p[0]) > tol:
                direction = 1 if p[i] > p[0] else -1
                ext = i
        elif direction > 0:
            if p[i] > p[ext]:
                ext = i
            elif p[ext] - p[i] > tol:
                turns.append(ext)
                direction, ext = -1, i
        else:
            if p[i] < p[ext]:
                ext = i
            elif p[i] - p[ext] > tol:
                turns.append(ext)
                direction, ext = 1, i
    return np.array(turns)


def oscillation_swings(record: EvolutionRecord, min_swing=None):
    """Peak-to-trough swings between consecutive turning points.

    Returns ``(midpoint_times, swings)``.
    """
    idx = _extrema(record, min_swing)
    t = record.times[idx]
    p = record.p_population[idx]
    return 0.5 * (t[1:] + t[:-1]), np.abs(np.diff(p))


def modulation_contrast(record: EvolutionRecord, min_swing=None):
    """Swing of the first oscillation, from the initial value to the first turning point."""
    _, swings = oscillation_swings(record, min_swing)
    if swings.size == 0:
        raise NotApplicableError("no turning point in the record")
    return float(swings[0])


def dephasing_time(record: EvolutionRecord, min_swing=None):
    """Time at which the oscillation envelope drops below ``1/e`` of its first swing.

    The envelope is the sequence of swings between consecutive extrema,
    placed at the midpoint of each swing and normalised to the first one;
    the crossing is linearly interpolated. Returns ``math.inf`` when the
    envelope never falls that low within the record.

    Raises
    ------
    NotApplicableError
        If the record holds fewer than two extrema beyond the initial point.
    """
    mid, swings = oscillation_swings(record, min_swing)
    if swings.size < 2:
        raise NotApplicableError("record shows no oscillation")
    env = swings / swings[0]
    below = np.nonzero(env < math.exp(-1))[0]
    if below.size == 0:
        return math.inf
    i = below[0]
    return float(np.interp(math.exp(-1), [env[i], env[i - 1]], [mid[i], mid[i - 1]]))


def oscillation_period(record: EvolutionRecord, max_turns=None, min_swing=None, until=None):
    """Mean spacing between like turning points (minimum to minimum, maximum to maximum).

    The starting point ``t = 0`` is not counted as a turning point. Measuring
    full cycles between like extrema keeps the estimate unbiased when rise
    and fall times differ, as they do once transfer saturates. With only two
    turning points the period is twice their spacing. ``until`` ignores
    turning points later than that time, e.g. once the ensemble has dephased.
    """
    idx = _extrema(record, min_swing)[1:]
    if until is not None:
        idx = idx[record.times[idx] <= until]
    if max_turns is not None:
        idx = idx[:max_turns]
    if idx.size < 2:
        raise NotApplicableError("need at least two turning points")
    t = record.times[idx]
    if idx.size == 2:
        return float(2 * (t[1] - t[0]))
    return float(np.mean(t[2:] - t[:-2]))


def rabi_cycles_before_dephasing(record: EvolutionRecord, min_swing=None):
    """Dephasing time in units of the oscillation period.

    The period is taken from turning points before the dephasing time only,
    where the oscillation is still coherent.
    """
    tau = dephasing_time(record, min_swing)
    until = None if math.isinf(tau) else tau
    return tau / oscillation_period(record, min_swing=min_swing, until=until)
