import math

import numpy as np
import pytest

from qtci.linalg import DensityState, RegisterShape, ShapeError, marginal, trace_norm
from qtci.states import (
    EnergyMismatch,
    HypergraphHamiltonian,
    cond_mutual_info,
    energy,
    energy_matched_mixture,
    entropy,
    entropy_continuity_gap,
    gibbs,
    heisenberg_chain,
    ising_chain,
    max_divergence,
    microcanonical,
    mutual_info,
    pauli_string,
    random_mixed,
    random_product,
    rel_entropy,
)
from qtci.w1 import w1_distance

Q1 = RegisterShape((0,), 2)
Z = pauli_string("Z")


def ket0():
    return DensityState(Q1, np.diag([1.0, 0.0]))


def mixed1():
    return DensityState(Q1, np.eye(2) / 2)


def test_hamiltonian_metadata():
    H = ising_chain(4, h=0.5)
    assert H.neighborhood(0) == (0, 1)
    assert H.neighborhood(2) == (1, 2, 3)
    assert H.max_neighborhood() == 3
    assert H.is_commuting()
    assert not heisenberg_chain(3).is_commuting()
    ring = ising_chain(3, periodic=True)
    assert ring.neighborhood(0) == (0, 1, 2)


def test_hamiltonian_rejects_bad_terms():
    sh = RegisterShape((0, 1), 2)
    with pytest.raises(ShapeError):
        HypergraphHamiltonian(sh, (((0, 5), pauli_string("ZZ")),))
    with pytest.raises(ShapeError):
        HypergraphHamiltonian(sh, (((0,), pauli_string("ZZ")),))
    with pytest.raises(ValueError):
        HypergraphHamiltonian(sh, (((0,), np.array([[0, 1], [0, 0]])),))


def test_gibbs_infinite_temperature():
    om = gibbs(ising_chain(3), 0.0)
    assert np.allclose(om.mat, np.eye(8) / 8)
    assert om.commuting


def test_gibbs_single_qubit_closed_form():
    H = HypergraphHamiltonian(Q1, (((0,), Z),))
    om = gibbs(H, 1.0)
    want = np.diag([np.exp(-1), np.exp(1)]) / (2 * np.cosh(1))
    assert np.allclose(om.mat, want, atol=1e-12)
    assert np.allclose(om.log_state(), np.diag(np.log(np.diag(want))))


def test_gibbs_two_qubit_ising_commuting():
    H = HypergraphHamiltonian(RegisterShape((0, 1), 2), (((0, 1), pauli_string("ZZ")),))
    assert gibbs(H, 0.7).commuting


def test_gibbs_extreme_beta_stays_finite():
    om = gibbs(ising_chain(3, h=1.0), 800.0)
    assert np.isfinite(om.mat).all()
    assert abs(np.trace(om.mat) - 1) < 1e-12
    with pytest.raises(ValueError):
        gibbs(ising_chain(2), -1.0)


def test_rel_entropy_examples():
    assert rel_entropy(ket0(), ket0()) == pytest.approx(0, abs=1e-12)
    assert rel_entropy(ket0(), mixed1()) == pytest.approx(math.log(2))
    assert rel_entropy(mixed1(), ket0()) == math.inf


def test_max_divergence_examples():
    assert max_divergence(ket0(), ket0()) == pytest.approx(0, abs=1e-12)
    assert max_divergence(ket0(), mixed1()) == pytest.approx(math.log(2))
    assert max_divergence(mixed1(), ket0()) == math.inf


def test_divergence_ordering_and_pinsker():
    rng = np.random.default_rng(0)
    sh = RegisterShape((0, 1), 2)
    for _ in range(20):
        r, w = random_mixed(sh, rng), random_mixed(sh, rng)
        S = rel_entropy(r, w)
        t = trace_norm(r - w)
        assert S >= -1e-12
        assert max_divergence(r, w) >= S - 1e-10
        assert S >= 0.5 * t ** 2 - 1e-12
        assert 0.25 * t ** 2 <= 1 - math.exp(-S) + 1e-12


def test_rel_entropy_data_processing():
    rng = np.random.default_rng(1)
    sh = RegisterShape((0, 1, 2), 2)
    for _ in range(20):
        r, w = random_mixed(sh, rng), random_mixed(sh, rng)
        assert rel_entropy(marginal(r, [1, 2]), marginal(w, [1, 2])) <= rel_entropy(r, w) + 1e-10


def test_rel_entropy_against_gibbs_state():
    om = gibbs(heisenberg_chain(3), 0.4)
    rho = random_mixed(om.shape, np.random.default_rng(2))
    assert rel_entropy(rho, om) == pytest.approx(rel_entropy(rho, om.state), abs=1e-10)


def test_mutual_information_examples():
    sh = RegisterShape((0, 1), 2)
    rng = np.random.default_rng(3)
    assert mutual_info(random_product(sh, rng), [0], [1]) == pytest.approx(0, abs=1e-10)
    bell = np.zeros(4)
    bell[[0, 3]] = 1 / np.sqrt(2)
    b = DensityState(sh, np.outer(bell, bell))
    assert mutual_info(b, [0], [1]) == pytest.approx(2 * math.log(2))
    sh3 = RegisterShape((0, 1, 2), 2)
    assert cond_mutual_info(random_product(sh3, rng), [0], [1], [2]) == pytest.approx(0, abs=1e-10)
    with pytest.raises(ShapeError):
        mutual_info(b, [0], [0])


def test_strong_subadditivity():
    rng = np.random.default_rng(4)
    sh = RegisterShape((0, 1, 2), 2)
    for _ in range(20):
        assert cond_mutual_info(random_mixed(sh, rng), [0], [1], [2]) >= -1e-8


def test_markov_chain_has_zero_cmi():
    om = gibbs(ising_chain(3, h=0.3), 0.7)
    assert abs(cond_mutual_info(om.state, [0], [1], [2])) < 1e-10


def test_microcanonical_examples():
    H = HypergraphHamiltonian(Q1, (((0,), Z),))
    assert np.allclose(microcanonical(H, 1.0, 0.5).mat, np.diag([1, 0]))
    H2 = ising_chain(2, h=0.25)
    full = microcanonical(H2, 1.5, 10.0)
    assert np.allclose(full.mat, np.eye(4) / 4)
    zz = HypergraphHamiltonian(RegisterShape((0, 1), 2), (((0, 1), pauli_string("ZZ")),))
    assert np.allclose(microcanonical(zz, 1.0, 0.5).mat, np.diag([0.5, 0, 0, 0.5]))


def test_microcanonical_shell_is_half_open():
    H = HypergraphHamiltonian(Q1, (((0,), Z),))
    # E - Delta = -1 exactly: the -1 level is excluded
    assert np.allclose(microcanonical(H, 1.0, 2.0).mat, np.diag([1, 0]))
    with pytest.raises(ValueError):
        microcanonical(H, 0.5, 0.25)


def test_microcanonical_commutes_with_h():
    H = heisenberg_chain(3)
    Hm = H.matrix()
    rho = microcanonical(H, 0.0, 2.0)
    assert np.max(np.abs(Hm @ rho.mat - rho.mat @ Hm)) <= 1e-10


def test_entropy_continuity_examples():
    r = random_mixed(RegisterShape((0, 1), 2), np.random.default_rng(5))
    assert entropy_continuity_gap(r, r, 0.0) == (0.0, 0.0)
    lhs, rhs = entropy_continuity_gap(ket0(), mixed1(), 0.5)
    assert lhs == pytest.approx(math.log(2))
    g = 1.5 * math.log(1.5) - 0.5 * math.log(0.5)
    assert rhs == pytest.approx(g + 0.5 * math.log(4))
    assert rhs == pytest.approx(1.648, abs=1e-3)


def test_entropy_continuity_with_certified_w1():
    rng = np.random.default_rng(6)
    sh = RegisterShape((0, 1, 2), 2)
    for _ in range(5):
        r, s = random_mixed(sh, rng), random_mixed(sh, rng)
        lhs, rhs = entropy_continuity_gap(r, s, w1_distance(r, s).value_upper)
        assert lhs <= rhs


def test_energy_matched_mixture():
    H = ising_chain(3, h=0.3)
    om = gibbs(H, 0.5)
    rng = np.random.default_rng(7)
    low = microcanonical(H, -2.0, 1.5)
    high = random_mixed(H.shape, rng)
    mix = energy_matched_mixture(low, high, H, energy(om.state, H))
    assert abs(energy(mix, H) - energy(om.state, H)) < 1e-9
    assert entropy(om.state) >= entropy(mix) - 1e-10
    with pytest.raises(EnergyMismatch):
        energy_matched_mixture(low, low, H, 100.0)
