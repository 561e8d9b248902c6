"""Four-atom groups with resonant and exchange dipole-dipole couplings.

Single-atom states are ``p`` (32p3/2, |m_j| = 3/2), ``s`` (32s) and ``s'``
(33s), each carrying the sign of its ``m_j``. A dipole transition
``p(+-3/2) <-> s(+-1/2)`` keeps that sign, so every atom keeps its initial
sign for the whole evolution and a product state is fully labelled by the
tuple of per-atom kinds.

Couplings come from the spherical-tensor form of the dipole-dipole operator,

    V = (r_a r_b / R^3) * sum_{q_a, q_b} A(q_a, q_b; Theta, Phi) C_{q_a} C_{q_b},

with single-atom angular factors ``<s m|C_q|p m'> = -1/sqrt(3)`` and
``<p m'|C_q|s m> = +1/sqrt(3)`` for the allowed ``q = m_final - m_initial``.
The processes kept are

* resonant ``p p <-> s s'`` (either atom may take ``s``), radial ``r_ps r_ps'``;
* exchange ``p s <-> s p`` (radial ``r_ps**2``) and ``p s' <-> s' p``
  (radial ``r_ps'**2``).

``pp <-> ss`` and ``p s' <-> s p`` are far off resonance and omitted. For a
pair this reproduces the channel couplings of :mod:`rydqpm.pair` exactly: the
product-state element is ``V_channel* / sqrt(2)`` and the symmetric ``ss'``
combination carries ``V_channel``.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError
from .records import EvolutionRecord
from .rng import STREAM_GROUPS, chunk_generator, chunks, config_hash, ordered_map
from .twolevel import PulseSequence
from .units import CONSTANTS, PhysicalConstants, as_density

P, S, SP = 0, 1, 2
KIND_NAMES = {P: "p", S: "s", SP: "s'"}
GROUP_CUBE_ATOMS = 100
GROUP_CHUNK = 256

_D_DOWN = -1.0 / math.sqrt(3.0)  # <s|C_q|p>
_D_UP = 1.0 / math.sqrt(3.0)  # <p|C_q|s>


# ---------------------------------------------------------------- geometry


@dataclass(eq=False)
class FourAtomGroup:
    """A centre atom (index 0) and its nearest neighbours, in order of distance.

    Groups built by :func:`build_group` have four atoms; :meth:`truncated`
    gives smaller groups with the same leading atoms.
    """

    positions: np.ndarray
    mj_signs: np.ndarray
    edge: float = float("nan")

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.mj_signs = np.asarray(self.mj_signs, dtype=int)
        if self.positions.shape[0] != self.mj_signs.shape[0]:
            raise InvalidInputError("one m_j sign per atom is required")
        if not np.all(np.isin(self.mj_signs, (-1, 1))):
            raise InvalidInputError("m_j signs must be +1 or -1")
        if self.n_atoms < 2:
            raise InvalidInputError("a group needs at least two atoms")
        if np.any(self.pair_geometry()[:, 2] <= 0):
            raise InvalidInputError("atoms in a group must be at distinct positions")

    @property
    def n_atoms(self):
        return self.positions.shape[0]

    def pairs(self):
        return list(itertools.combinations(range(self.n_atoms), 2))

    def pair_geometry(self):
        """Rows ``(a, b, R, Theta, Phi)`` for the vector from atom ``a`` to atom ``b``."""
        rows = []
        for a, b in self.pairs():
            d = self.positions[b] - self.positions[a]
            R = float(np.linalg.norm(d))
            theta = math.acos(max(-1.0, min(1.0, d[2] / R))) if R > 0 else 0.0
            phi = math.atan2(d[1], d[0]) % (2 * math.pi)
            rows.append((a, b, R, theta, phi))
        return np.array(rows, dtype=float)

    def truncated(self, n_atoms):
        if not 2 <= n_atoms <= self.n_atoms:
            raise InvalidInputError(f"cannot truncate a {self.n_atoms}-atom group to {n_atoms}")
        return FourAtomGroup(self.positions[:n_atoms].copy(), self.mj_signs[:n_atoms].copy(), self.edge)

    def permuted(self, order):
        order = list(order)
        return FourAtomGroup(self.positions[order].copy(), self.mj_signs[order].copy(), self.edge)


def cube_edge(rho):
    """Edge in um of the cube holding 100 atoms at density ``rho``."""
    return (GROUP_CUBE_ATOMS / as_density(rho).per_um3) ** (1.0 / 3.0)


def build_group(rho, rng: np.random.Generator, n_atoms=4) -> FourAtomGroup:
    """Centre atom of a cube of 99 uniformly placed atoms plus its nearest neighbours.

    Each atom gets a random ``m_j`` sign.
    """
    L = cube_edge(rho)
    others = rng.random((GROUP_CUBE_ATOMS - 1, 3)) * L
    centre = np.full(3, L / 2)
    dist = np.linalg.norm(others - centre, axis=1)
    nearest = np.argsort(dist, kind="stable")[: n_atoms - 1]
    positions = np.vstack([centre, others[nearest]])
    signs = rng.choice(np.array([-1, 1]), size=n_atoms)
    return FourAtomGroup(positions, signs, L)


# ---------------------------------------------------------------- couplings


def _angular_table(q_a, q_b, theta, phi):
    """Coefficient of ``C_{q_a} C_{q_b}`` in the dipole-dipole operator."""
    s2 = np.sin(theta) ** 2
    out = np.zeros(np.broadcast(q_a, q_b, theta).shape, dtype=complex)
    same = q_a == q_b
    out = np.where(same & (q_a == 1), -1.5 * s2 * np.exp(-2j * phi), out)
    out = np.where(same & (q_a == -1), -1.5 * s2 * np.exp(2j * phi), out)
    out = np.where(q_a == -q_b, 1.5 * s2 - 1.0, out)
    # q = 0 components never occur between p(|m|=3/2) and s(|m|=1/2)
    return out


def pair_transition_elements(kind_in, kind_out, signs, R, theta, phi, constants: PhysicalConstants = CONSTANTS):
    """Matrix elements ``<out_a out_b|V|in_a in_b>`` in MHz.

    ``kind_in`` and ``kind_out`` have shape ``(..., 2)`` (atoms a, b),
    ``signs`` the matching ``m_j`` signs; ``R, theta, phi`` describe the
    vector from a to b. Transitions that are not single-photon ``p <-> s/s'``
    on both atoms give zero. This is the single place where couplings
    between product states are defined.
    """
    kind_in = np.asarray(kind_in)
    kind_out = np.asarray(kind_out)
    signs = np.asarray(signs)
    down = (kind_in == P) & (kind_out != P)
    up = (kind_in != P) & (kind_out == P)
    active = down | up
    excited = np.where(down, kind_out, kind_in)
    radial = np.where(excited == S, constants.r_ps, constants.r_ps_prime)
    d = np.where(down, _D_DOWN, _D_UP)
    q = np.where(down, -signs, signs)
    ok = active[..., 0] & active[..., 1]
    A = _angular_table(q[..., 0], q[..., 1], theta, phi)
    pre = radial[..., 0] * radial[..., 1] * constants.atomic_to_MHz_per_um3 / np.asarray(R) ** 3
    return np.where(ok, pre * A * d[..., 0] * d[..., 1], 0.0)


def dipole_matrix_element(in_a, in_b, out_a, out_b, sign_a, sign_b, R, theta, phi, constants=CONSTANTS):
    """Scalar form of :func:`pair_transition_elements`; kinds are ``P``, ``S`` or ``SP``."""
    return complex(
        pair_transition_elements(
            np.array([in_a, in_b]), np.array([out_a, out_b]), np.array([sign_a, sign_b]), R, theta, phi, constants
        )
    )


# ---------------------------------------------------------------- basis


def _pair_moves(ka, kb, exchange):
    """Kinds reachable from ``(ka, kb)`` through one coupling term."""
    if ka == P and kb == P:
        return [(S, SP), (SP, S)]
    if {ka, kb} == {S, SP}:
        return [(P, P)]
    if exchange and {ka, kb} in ({P, S}, {P, SP}):
        return [(kb, ka)]
    return []


@dataclass(frozen=True)
class GroupBasis:
    """Product states reachable from all-``p``, as tuples of per-atom kinds."""

    states: tuple
    mj_signs: tuple
    exchange: bool = True
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {s: i for i, s in enumerate(self.states)})

    def __len__(self):
        return len(self.states)

    @property
    def n_atoms(self):
        return len(self.mj_signs)

    def kind_counts(self):
        """Array ``(dim, 3)`` of per-state counts of ``p``, ``s`` and ``s'``."""
        arr = np.array(self.states)
        return np.stack([(arr == k).sum(axis=1) for k in (P, S, SP)], axis=1)

    def labels(self):
        out = []
        for st in self.states:
            out.append(
                " ".join(
                    f"{KIND_NAMES[k]}({'+' if sg > 0 else '-'}{'3/2' if k == P else '1/2'})"
                    for k, sg in zip(st, self.mj_signs)
                )
            )
        return out


@functools.lru_cache(maxsize=None)
def _closure(n_atoms, exchange):
    start = (P,) * n_atoms
    seen = {start: 0}
    order = [start]
    frontier = [start]
    while frontier:
        nxt = []
        for st in frontier:
            for a, b in itertools.combinations(range(n_atoms), 2):
                for ka, kb in _pair_moves(st[a], st[b], exchange):
                    new = list(st)
                    new[a], new[b] = ka, kb
                    new = tuple(new)
                    if new not in seen:
                        seen[new] = len(order)
                        order.append(new)
                        nxt.append(new)
        frontier = nxt
    return tuple(order)


@functools.lru_cache(maxsize=None)
def _transition_table(n_atoms, exchange):
    """Directed couplings ``(final, initial, pair, in_a, in_b, out_a, out_b)``."""
    states = _closure(n_atoms, exchange)
    index = {s: i for i, s in enumerate(states)}
    pairs = list(itertools.combinations(range(n_atoms), 2))
    rows = []
    for i, st in enumerate(states):
        for p_idx, (a, b) in enumerate(pairs):
            for ka, kb in _pair_moves(st[a], st[b], exchange):
                new = list(st)
                new[a], new[b] = ka, kb
                rows.append((index[tuple(new)], i, p_idx, st[a], st[b], ka, kb))
    return np.array(rows, dtype=int).reshape(-1, 7)


def enumerate_basis(group: FourAtomGroup, exchange=True) -> GroupBasis:
    """Closure of the all-``p`` state under the implemented couplings."""
    return GroupBasis(_closure(group.n_atoms, bool(exchange)), tuple(int(s) for s in group.mj_signs), bool(exchange))


# ---------------------------------------------------------------- Hamiltonian


@dataclass(eq=False)
class GroupHamiltonian:
    """``H = coupling + E * conversions`` over a :class:`GroupBasis`, in MHz."""

    coupling: np.ndarray
    conversions: np.ndarray
    detuning: float

    @property
    def matrix(self):
        return self.coupling + np.diag(self.detuning * self.conversions)

    def at(self, E):
        return GroupHamiltonian(self.coupling, self.conversions, float(E))

    def hermiticity_error(self):
        m = self.matrix
        return float(np.max(np.abs(m - m.conj().T)))


def build_hamiltonian(group: FourAtomGroup, basis: GroupBasis, E=0.0, constants=CONSTANTS) -> GroupHamiltonian:
    """Dense Hamiltonian of a group at detuning ``E``.

    The all-``p`` state is the energy zero and every completed
    ``pp -> ss'`` conversion adds ``E``.
    """
    table = _transition_table(group.n_atoms, basis.exchange)
    geom = group.pair_geometry()
    dim = len(basis)
    H = np.zeros((dim, dim), dtype=complex)
    if table.size:
        f, i, pidx = table[:, 0], table[:, 1], table[:, 2]
        a = geom[pidx, 0].astype(int)
        b = geom[pidx, 1].astype(int)
        signs = np.stack([group.mj_signs[a], group.mj_signs[b]], axis=1)
        vals = pair_transition_elements(
            table[:, 3:5], table[:, 5:7], signs, geom[pidx, 2], geom[pidx, 3], geom[pidx, 4], constants
        )
        np.add.at(H, (f, i), vals)
    conversions = basis.kind_counts()[:, 1].astype(float)
    return GroupHamiltonian(H, conversions, float(E))


# ---------------------------------------------------------------- propagation


@dataclass(eq=False)
class GroupPopulations:
    times: np.ndarray
    p: np.ndarray
    s: np.ndarray
    sprime: np.ndarray
    norm: np.ndarray
    state_probabilities: np.ndarray | None = None


def _eigh(H):
    try:
        return np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(H)
        raise NumericalError(f"eigendecomposition failed (condition number {cond:.3g})") from exc


def propagate_group(
    group: FourAtomGroup,
    seq: PulseSequence,
    times,
    protocol="truncate",
    exchange=True,
    keep_states=False,
    constants=CONSTANTS,
) -> GroupPopulations:
    """Exact piecewise-constant evolution from the all-``p`` state.

    Each distinct detuning is diagonalised once; a zone of length ``tau``
    applies ``W exp(-2 pi i lambda tau) W^dagger``. Populations are the
    per-atom fractions in ``p``, ``s`` and ``s'``.
    """
    times = np.asarray(times, dtype=float)
    durations = seq.zone_durations(times, protocol)
    basis = enumerate_basis(group, exchange)
    ham = build_hamiltonian(group, basis, 0.0, constants)
    eig = {}
    for e in set(seq.detunings.tolist()):
        eig[e] = _eigh(ham.at(e).matrix)
    psi = np.zeros((len(basis), times.size), dtype=complex)
    psi[0, :] = 1.0
    for (e, _), tau in zip(seq.zones, durations):
        lam, W = eig[e]
        phase = np.exp(-2j * np.pi * lam[:, None] * tau[None, :])
        # zero-length zones leave the state exactly as it is
        psi = np.where(tau[None, :] > 0, W @ (phase * (W.conj().T @ psi)), psi)
    prob = np.abs(psi) ** 2
    counts = basis.kind_counts().astype(float) / group.n_atoms
    frac = counts.T @ prob
    return GroupPopulations(
        times, frac[0], frac[1], frac[2], prob.sum(axis=0), prob if keep_states else None
    )


# ---------------------------------------------------------------- ensembles


def iter_groups(rho, n_groups, seed, n_atoms=4):
    """Yield ``(index, group)`` for the groups an ensemble run with ``seed`` uses."""
    rho = as_density(rho).rho
    for index, start, stop in chunks(int(n_groups), GROUP_CHUNK):
        rng = chunk_generator(seed, STREAM_GROUPS, index)
        for k in range(start, stop):
            yield k, build_group(rho, rng).truncated(n_atoms)


def _group_chunk(rho, seq, times, protocol, exchange, n_atoms, seed, chunk):
    index, start, stop = chunk
    rng = chunk_generator(seed, STREAM_GROUPS, index)
    sums = np.zeros((4, len(times)))
    for k in range(start, stop):
        group = build_group(rho, rng).truncated(n_atoms)
        try:
            pops = propagate_group(group, seq, times, protocol, exchange)
        except NumericalError as exc:
            raise NumericalError(f"group {k}: {exc}") from exc
        sums[0] += pops.p
        sums[1] += pops.p**2
        sums[2] += pops.s
        sums[3] += pops.sprime
    return sums


def ensemble_average_groups(
    rho,
    seq: PulseSequence,
    n_groups,
    seed,
    times,
    protocol="truncate",
    exchange=True,
    n_atoms=4,
    workers=1,
) -> EvolutionRecord:
    """Average populations over independently built and propagated groups.

    Group ``k`` is drawn from a stream fixed by ``(seed, k)``, so results do
    not depend on ``workers``.
    """
    rho = as_density(rho).rho
    if int(n_groups) != n_groups or n_groups < 1:
        raise InvalidInputError(f"n_groups must be a positive integer, got {n_groups}")
    n_groups = int(n_groups)
    times = np.asarray(times, dtype=float)
    seq.zone_durations(times, protocol)
    task = functools.partial(_group_chunk, rho, seq, times, protocol, bool(exchange), int(n_atoms), int(seed))
    parts = ordered_map(task, chunks(n_groups, GROUP_CHUNK), workers)
    total = np.zeros_like(parts[0])
    for part in parts:
        total = total + part
    mean = total[0] / n_groups
    if n_groups > 1:
        var = np.maximum(total[1] / n_groups - mean**2, 0.0) * n_groups / (n_groups - 1)
        err = np.sqrt(var / n_groups)
    else:
        err = np.zeros_like(mean)
    model = "4-atom" if n_atoms == 4 else f"{n_atoms}-atom-group"
    meta = {
        "model": model,
        "seed": int(seed),
        "exchange": bool(exchange),
        "protocol": protocol,
        "n_groups": n_groups,
        "config_hash": config_hash(
            {"kind": "groups", "rho": rho, "n_groups": n_groups, "seed": int(seed), "exchange": bool(exchange),
             "n_atoms": int(n_atoms), "zones": seq.zones, "protocol": protocol}
        ),
    }
    extra = {"s_population": total[2] / n_groups, "sprime_population": total[3] / n_groups}
    return EvolutionRecord(times, mean, meta, p_stderr=err, extra=extra)
