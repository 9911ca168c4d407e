import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import unitary_group

from oracles import tensor_amplitude

from meshsim.fock import (
    MAX_PHOTONS,
    FockState,
    fock_basis,
    pair_probabilities,
    permanent,
    post_selected_transform,
    transition_amplitude,
    two_photon_statistics,
)

BS = np.array([[1, 1j], [1j, 1]]) / np.sqrt(2)


def brute_permanent(m):
    n = len(m)
    return sum(np.prod([m[i, p[i]] for i in range(n)]) for p in itertools.permutations(range(n)))


def test_permanent_examples():
    assert permanent(np.array([[2.5]])) == 2.5
    assert permanent(np.array([[1, 2], [3, 4]])) == 10
    assert permanent(np.ones((3, 3))) == 6
    with pytest.raises(ValueError):
        permanent(np.ones((2, 3)))


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_permanent_matches_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    assert abs(permanent(m) - brute_permanent(m)) < 1e-10 * max(1, abs(brute_permanent(m)))
    c = 1.7 - 0.3j
    scaled = m.copy()
    scaled[0] *= c
    assert abs(permanent(scaled) - c * permanent(m)) < 1e-10 * max(1, abs(permanent(m)))


def test_single_photon_amplitude_is_matrix_entry():
    u = unitary_group.rvs(4, random_state=1)
    for a, b in itertools.product(range(4), repeat=2):
        amp = transition_amplitude(u, FockState.from_modes(4, [a]), FockState.from_modes(4, [b]))
        assert amp == pytest.approx(u[b, a])


def test_hong_ou_mandel():
    s11 = FockState((1, 1))
    assert abs(transition_amplitude(BS, s11, s11)) < 1e-15
    amp = transition_amplitude(BS, s11, FockState((2, 0)))
    assert amp == pytest.approx(1j / np.sqrt(2))
    gamma, density = two_photon_statistics(BS, s11)
    np.testing.assert_allclose(gamma.gamma, [[0.5, 0], [0, 0.5]], atol=1e-15)
    np.testing.assert_allclose(density, [1, 1], atol=1e-15)


def test_photon_number_checks():
    u = np.eye(3)
    with pytest.raises(ValueError, match="mismatch"):
        transition_amplitude(u, FockState((1, 0, 0)), FockState((1, 1, 0)))
    big = np.eye(6)
    s = FockState((1, 1, 1, 1, 1, 0))
    with pytest.raises(ValueError, match="maximum"):
        transition_amplitude(big, s, s)
    assert MAX_PHOTONS == 4
    with pytest.raises(ValueError, match="inconsistent"):
        post_selected_transform(u, [FockState((1, 0, 0))], [FockState((1, 1, 0))])
    with pytest.raises(ValueError, match="exactly 2"):
        two_photon_statistics(u, FockState((1, 0, 0)))
    with pytest.raises(ValueError):
        FockState((1, -1))


def random_cases(n_cases, seed):
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        n = int(rng.integers(2, 4))
        u = unitary_group.rvs(n, random_state=rng)
        inp = sorted(rng.integers(0, n, 2))
        out = sorted(rng.integers(0, n, 2))
        yield u, inp, out


def test_oracle_two_photons_three_modes():
    for u, inp, out in random_cases(200, 3):
        n = u.shape[0]
        amp = transition_amplitude(u, FockState.from_modes(n, inp), FockState.from_modes(n, out))
        assert abs(amp - tensor_amplitude(u, inp, out)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3))
def test_oracle_more_photons(seed, n_photons):
    rng = np.random.default_rng(seed)
    u = unitary_group.rvs(3, random_state=rng)
    inp = sorted(rng.integers(0, 3, n_photons))
    out = sorted(rng.integers(0, 3, n_photons))
    amp = transition_amplitude(u, FockState.from_modes(3, inp), FockState.from_modes(3, out))
    assert abs(amp - tensor_amplitude(u, inp, out)) < 1e-12


@pytest.mark.parametrize("n_photons", [1, 2, 3, 4])
def test_probability_conservation(n_photons):
    u = unitary_group.rvs(4, random_state=n_photons)
    basis = fock_basis(4, n_photons)
    for inp in basis[:5]:
        total = sum(abs(transition_amplitude(u, inp, out)) ** 2 for out in basis)
        assert total == pytest.approx(1.0, abs=1e-10)


def test_post_selected_transform_entries_and_success():
    u = unitary_group.rvs(4, random_state=5)
    basis = [FockState.from_modes(4, m) for m in ([0, 2], [0, 3], [1, 2], [1, 3])]
    t = post_selected_transform(u, basis, basis)
    assert t.matrix[2, 1] == transition_amplitude(u, basis[1], basis[2])
    np.testing.assert_allclose(t.success_probability, np.sum(np.abs(t.matrix) ** 2, axis=0))
    assert np.all((t.success_probability >= 0) & (t.success_probability <= 1))
    assert np.linalg.norm(t.normalized()) == pytest.approx(1.0)


def test_all_bar_dual_rail_identity():
    u = np.diag(np.exp(1j * np.arange(4)))
    basis = [FockState.from_modes(4, m) for m in ([0, 2], [0, 3], [1, 2], [1, 3])]
    m = post_selected_transform(u, basis, basis).matrix
    np.testing.assert_allclose(np.abs(m), np.eye(4), atol=1e-15)


def test_identity_correlations():
    gamma, density = two_photon_statistics(np.eye(6), FockState.from_modes(6, [3, 5]))
    expected = np.zeros((6, 6))
    expected[3, 5] = expected[5, 3] = 1
    np.testing.assert_allclose(gamma.gamma, expected)
    np.testing.assert_allclose(density, [0, 0, 0, 1, 0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 8), st.booleans(), st.floats(0.1, 1.0))
def test_correlation_invariants(seed, n, bunched, scale):
    rng = np.random.default_rng(seed)
    u = scale * unitary_group.rvs(n, random_state=rng)
    a, b = (0, 0) if bunched else (0, n - 1)
    inp = FockState.from_modes(n, [a, b])
    gamma, density = two_photon_statistics(u, inp)
    g = gamma.gamma
    np.testing.assert_allclose(g, g.T)
    assert g.min() >= 0
    assert np.triu(g).sum() == pytest.approx(1.0)
    assert density.sum() == pytest.approx(2.0)
    # agrees with permanents over all output pairs
    p = np.zeros((n, n))
    for q, r in itertools.combinations_with_replacement(range(n), 2):
        p[q, r] = p[r, q] = abs(transition_amplitude(u, inp, FockState.from_modes(n, [q, r]))) ** 2
    np.testing.assert_allclose(g, p / np.triu(p).sum(), atol=1e-12)


def test_pair_probabilities_stack():
    u = unitary_group.rvs(5, random_state=8)
    stacked = pair_probabilities(np.stack([u[:, 0], u[:, 1]]), np.stack([u[:, 2], u[:, 3]]))
    np.testing.assert_allclose(stacked[1], pair_probabilities(u[:, 1], u[:, 3]))
