import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rydqpm import multiatom as ma
from rydqpm import ensemble as ens
from rydqpm.errors import InvalidInputError, NumericalError
from rydqpm.pair import AtomPair, Channel, channel_coupling
from rydqpm.twolevel import PulseSequence, qpm_sequence, sequence_amplitudes, transfer_probability
from rydqpm.records import EvolutionRecord
from rydqpm.units import as_density

from .oracles import ks_statistic, nn_cdf

RHO = 1e9


def _group(seed=0, n_atoms=4):
    return ma.build_group(RHO, np.random.default_rng(seed), n_atoms)


def _pair_group(R, theta, phi, signs):
    d = R * np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    return ma.FourAtomGroup(np.array([[0.0, 0.0, 0.0], d]), np.array(signs))


group_seeds = st.integers(0, 2**32 - 1)


# ---------------------------------------------------------------- construction


def test_cube_edge():
    assert ma.cube_edge(RHO) == pytest.approx(46.416, abs=1e-3)
    assert ma.cube_edge(8e9) == pytest.approx(ma.cube_edge(RHO) / 2)


def test_group_inside_cube_with_centre_atom():
    rng = np.random.default_rng(3)
    for _ in range(200):
        g = ma.build_group(RHO, rng)
        assert g.n_atoms == 4
        assert np.array_equal(g.positions[0], np.full(3, g.edge / 2))
        assert np.all((g.positions >= 0) & (g.positions <= g.edge))
        assert set(g.mj_signs) <= {-1, 1}
        d = np.linalg.norm(g.positions[1:] - g.positions[0], axis=1)
        assert np.all(np.diff(d) >= 0)


def test_first_neighbour_distance_distribution():
    rng = np.random.default_rng(11)
    R = np.empty(100_000)
    for k in range(R.size):
        g = ma.build_group(RHO, rng)
        R[k] = np.linalg.norm(g.positions[1] - g.positions[0])
    assert ks_statistic(R, lambda x: nn_cdf(x, as_density(RHO).per_um3)) < 0.01


@given(group_seeds)
def test_pair_geometry_consistent(seed):
    g = _group(seed)
    geom = g.pair_geometry()
    assert geom.shape == (6, 5)
    for a, b, R, theta, phi in geom:
        d = g.positions[int(b)] - g.positions[int(a)]
        rebuilt = R * np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
        assert np.allclose(rebuilt, d, atol=1e-10)
        assert R > 0


def test_group_validation():
    with pytest.raises(InvalidInputError):
        ma.FourAtomGroup(np.zeros((2, 3)), np.array([1, 1]))
    with pytest.raises(InvalidInputError):
        ma.FourAtomGroup(np.eye(3)[:2], np.array([1, 0]))
    with pytest.raises(InvalidInputError):
        ma.FourAtomGroup(np.eye(3)[:1], np.array([1]))
    with pytest.raises(InvalidInputError):
        _group().truncated(5)


def test_iter_groups_deterministic():
    a = [g.positions for _, g in ma.iter_groups(RHO, 300, 4)]
    b = [g.positions for _, g in ma.iter_groups(RHO, 300, 4)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    two = [g.positions for _, g in ma.iter_groups(RHO, 300, 4, n_atoms=2)]
    assert all(np.array_equal(x[:2], y) for x, y in zip(a, two))


# ---------------------------------------------------------------- basis


@pytest.mark.parametrize("exchange", [True, False])
def test_basis_closure_and_selection_rule(exchange):
    g = _group(1)
    basis = ma.enumerate_basis(g, exchange)
    counts = basis.kind_counts()
    assert basis.states[0] == (ma.P,) * 4
    assert np.array_equal(counts[:, 1], counts[:, 2])
    assert np.all(counts.sum(axis=1) == 4)
    assert len(basis) == 19
    # applying H to any basis vector stays inside the basis
    H = ma.build_hamiltonian(g, basis, 3.0).matrix
    assert H.shape == (19, 19)
    labels = basis.labels()
    assert labels[0] == " ".join(f"p({'+' if s > 0 else '-'}3/2)" for s in g.mj_signs)


def test_basis_independent_of_geometry():
    sizes = {len(ma.enumerate_basis(_group(s))) for s in range(20)}
    assert sizes == {19}
    assert len(ma.enumerate_basis(_group(0, 2))) == 3
    assert len(ma.enumerate_basis(_group(0, 3), exchange=False)) == 7


def test_two_atom_antisymmetric_combination_uncoupled():
    g = _pair_group(4.0, 1.0, 0.7, (1, 1))
    basis = ma.enumerate_basis(g)
    H = ma.build_hamiltonian(g, basis, 2.0).matrix
    assert len(basis) == 3
    # pp couples to ss' and s's with equal weight, so (ss' - s's)/sqrt(2) is dark
    anti = np.array([0.0, 1.0, -1.0]) / math.sqrt(2)
    assert abs(anti @ H[:, 0]) < 1e-12
    V = channel_coupling(AtomPair(4.0, 1.0, 0.7, Channel.PlusPlus))
    assert abs(math.sqrt(2) * H[0, 1] - V) < 1e-12


# ---------------------------------------------------------------- Hamiltonian


@given(group_seeds, st.floats(-50, 50))
def test_hamiltonian_hermitian_with_conversion_diagonal(seed, E):
    g = _group(seed)
    basis = ma.enumerate_basis(g)
    ham = ma.build_hamiltonian(g, basis, E)
    H = ham.matrix
    assert ham.hermiticity_error() < 1e-12
    assert H[0, 0] == 0
    assert np.allclose(np.diag(H).real, basis.kind_counts()[:, 1] * E, atol=1e-12)
    flipped = ham.at(-E).matrix
    assert np.allclose(np.diag(flipped), -np.diag(H), atol=1e-12)
    off = ~np.eye(len(basis), dtype=bool)
    assert np.array_equal(flipped[off], H[off])


def test_trace_zero_on_resonance():
    g = _group(5)
    assert abs(np.trace(ma.build_hamiltonian(g, ma.enumerate_basis(g), 0.0).matrix)) < 1e-12


def test_collinear_pair_channels():
    R = 3.0
    # both +3/2 along the field: the ++ resonant element vanishes
    res = ma.dipole_matrix_element(ma.P, ma.P, ma.S, ma.SP, 1, 1, R, 0.0, 0.0)
    exch = ma.dipole_matrix_element(ma.P, ma.S, ma.S, ma.P, 1, 1, R, 0.0, 0.0)
    assert abs(res) < 1e-15
    assert abs(exch) > 1.0
    # opposite signs keep the (sin^2 - 2/3) form
    pm = ma.dipole_matrix_element(ma.P, ma.P, ma.S, ma.SP, 1, -1, R, 0.0, 0.0)
    assert math.sqrt(2) * pm == pytest.approx(channel_coupling(AtomPair(R, 0.0, 0.0, Channel.PlusMinus)))


@given(st.floats(0, math.pi), st.floats(0, 2 * math.pi - 1e-9), st.sampled_from([(1, 1), (-1, -1), (1, -1), (-1, 1)]))
def test_resonant_elements_match_pair_channels(theta, phi, signs):
    R = 2.5
    el = ma.dipole_matrix_element(ma.P, ma.P, ma.S, ma.SP, *signs, R, theta, phi)
    V = channel_coupling(AtomPair(R, theta, phi, Channel.from_signs(*signs)))
    # <ss'|H|pp> is the conjugate of V = <pp|H|ss'>
    assert abs(math.sqrt(2) * el - np.conj(V)) < 1e-10


def test_exchange_uses_squared_radial_elements():
    ps = ma.dipole_matrix_element(ma.P, ma.S, ma.S, ma.P, 1, -1, 3.0, 1.1, 0.4)
    psp = ma.dipole_matrix_element(ma.P, ma.SP, ma.SP, ma.P, 1, -1, 3.0, 1.1, 0.4)
    assert abs(ps / psp) == pytest.approx((964 / 941) ** 2)


# ---------------------------------------------------------------- propagation


@given(group_seeds, st.floats(-30, 30), st.integers(0, 1))
def test_norm_conserved(seed, E, exchange):
    g = _group(seed)
    seq = qpm_sequence(E, 0.5, 4)
    t = np.linspace(0, 0.5, 41)
    pops = ma.propagate_group(g, seq, t, "rescale", bool(exchange))
    assert np.max(np.abs(pops.norm - 1)) < 1e-10
    assert pops.p[0] == 1.0
    assert np.allclose(pops.s, pops.sprime, atol=1e-12)
    assert np.allclose(pops.p + pops.s + pops.sprime, 1.0, atol=1e-10)


def test_populated_states_obey_selection_rule():
    g = _group(8)
    pops = ma.propagate_group(g, qpm_sequence(15.0, 0.4, 2), np.linspace(0, 0.4, 9), keep_states=True)
    counts = ma.enumerate_basis(g).kind_counts()
    populated = np.any(pops.state_probabilities > 1e-14, axis=1)
    assert populated.sum() > 3
    assert np.array_equal(counts[populated, 1], counts[populated, 2])


@given(st.floats(1.0, 8.0), st.floats(0, math.pi), st.floats(0, 6.28), st.sampled_from([(1, 1), (1, -1), (-1, 1), (-1, -1)]), st.floats(-20, 20))
def test_exchange_off_pair_matches_two_level(R, theta, phi, signs, E):
    g = _pair_group(R, theta, phi, signs)
    V = channel_coupling(AtomPair(R, theta, phi, Channel.from_signs(*signs)))
    t = np.linspace(0, 1.0, 21)
    pops = ma.propagate_group(g, PulseSequence.constant(E, 1.0), t, exchange=False)
    assert np.allclose(pops.p, 1 - transfer_probability(E, V, t), atol=1e-10)


def test_exchange_off_pair_matches_qpm_amplitudes():
    g = _pair_group(3.0, 1.2, 0.3, (1, -1))
    V = channel_coupling(AtomPair(3.0, 1.2, 0.3, Channel.PlusMinus))
    seq = qpm_sequence(12.0, 0.6, 4)
    t = np.linspace(0, 0.6, 31)
    c_pp, _ = sequence_amplitudes(seq, V, t, "rescale")
    pops = ma.propagate_group(g, seq, t, "rescale", exchange=False)
    assert np.allclose(pops.p, np.abs(c_pp) ** 2, atol=1e-10)


def test_permutation_invariance():
    g = _group(21)
    seq = qpm_sequence(15.0, 0.4, 2)
    t = np.linspace(0, 0.4, 17)
    ref = ma.propagate_group(g, seq, t)
    for order in ([1, 0, 2, 3], [3, 2, 1, 0], [2, 0, 3, 1]):
        perm = ma.propagate_group(g.permuted(order), seq, t)
        assert np.allclose(perm.p, ref.p, atol=1e-10)
        assert np.allclose(perm.s, ref.s, atol=1e-10)


def test_eigendecomposition_failure_is_reported(monkeypatch):
    def boom(H):
        raise np.linalg.LinAlgError("no convergence")

    monkeypatch.setattr(np.linalg, "eigh", boom)
    with pytest.raises(NumericalError, match="condition number"):
        ma.propagate_group(_group(), PulseSequence.constant(1.0, 0.1), [0.0, 0.1])
    with pytest.raises(NumericalError, match="group 0"):
        ma.ensemble_average_groups(RHO, PulseSequence.constant(1.0, 0.1), 1, 0, [0.0, 0.1])


# ---------------------------------------------------------------- ensembles


def test_single_group_ensemble_matches_propagation():
    seq = qpm_sequence(15.0, 0.4, 4)
    t = np.linspace(0, 0.4, 21)
    rec = ma.ensemble_average_groups(RHO, seq, 1, 9, t, "rescale")
    (_, g), = ma.iter_groups(RHO, 1, 9)
    pops = ma.propagate_group(g, seq, t, "rescale")
    assert np.allclose(rec.p_population, pops.p, atol=1e-14)
    assert rec.model == "4-atom"
    assert np.allclose(rec.extra["s_population"], pops.s)


def test_group_ensemble_worker_independent():
    seq = qpm_sequence(15.0, 0.4, 2)
    t = np.linspace(0, 0.4, 11)
    a = ma.ensemble_average_groups(RHO, seq, 600, 2, t, "rescale", workers=1)
    b = ma.ensemble_average_groups(RHO, seq, 600, 2, t, "rescale", workers=3)
    assert np.array_equal(a.p_population, b.p_population)
    assert np.array_equal(a.p_stderr, b.p_stderr)


def test_group_ensemble_rejects_bad_count():
    with pytest.raises(InvalidInputError):
        ma.ensemble_average_groups(RHO, PulseSequence.constant(0.0, 0.1), 0, 0, [0.0])


def test_resonance_is_not_oscillatory():
    t = np.linspace(0, 0.4, 81)
    rec = ma.ensemble_average_groups(RHO, PulseSequence.constant(0.0, 0.4), 1000, 3, t, workers=2)
    late = t > 0.1
    sub = EvolutionRecord(t[late], rec.p_population[late], {}, rec.p_stderr[late])
    # a slow drift is allowed, a reversal larger than 2 % is not
    assert ens.oscillation_swings(sub, min_swing=0.02)[1].size == 0


def _paired_z(seq, t, n_groups, other):
    """Mean paired difference (4-atom minus ``other``) in units of its standard error."""
    diff = np.array([ma.propagate_group(g, seq, t, "rescale").p - other(g) for _, g in ma.iter_groups(RHO, n_groups, 4)])
    err = diff.std(axis=0, ddof=1) / math.sqrt(n_groups)
    return diff.mean(axis=0)[1:] / err[1:]


def test_exchange_is_not_a_no_op():
    t = np.linspace(0, 0.4, 9)
    seq = PulseSequence.constant(15.0, 0.4)
    z = _paired_z(seq, t, 1500, lambda g: ma.propagate_group(g, seq, t, exchange=False).p)
    assert np.max(np.abs(z[t[1:] > 0.2])) > 3


def test_four_atom_qpm_differs_from_pairs():
    t = np.linspace(0, 0.4, 9)
    seq = qpm_sequence(15.0, 0.4, 4)
    z = _paired_z(seq, t, 1500, lambda g: ma.propagate_group(g.truncated(2), seq, t, "rescale", exchange=False).p)
    assert np.max(np.abs(z[t[1:] > 0.2])) > 3
