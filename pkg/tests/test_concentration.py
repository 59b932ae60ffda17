import math

import numpy as np
import pytest

from qtci.concentration import (
    argmax_shell_energy,
    average_marginal,
    conjugated_lip_bound,
    dual_functional,
    ensemble_equivalence,
    entropy_w1_lower,
    gaussian_tail_bound,
    laplace_bound_check,
    microcanonical_equivalence_bound,
    product_tci_constant,
    tail_prob,
    tail_report,
    tci_dual_lower,
)
from qtci.dobrushin import eta_diamond, tci_markov_bound
from qtci.linalg import (
    DensityState,
    HermitianOp,
    NotPositiveError,
    RegisterShape,
    embed,
    mat_power,
    trace_norm,
)
from qtci.states import (
    EnergyMismatch,
    NotCommutingError,
    energy,
    energy_matched_mixture,
    gibbs,
    heisenberg_chain,
    ising_chain,
    microcanonical,
    pauli_string,
    random_mixed,
    random_product,
    rel_entropy,
)
from qtci.w1 import lip_const, w1_distance

Q1 = RegisterShape((0,), 2)
Q2 = RegisterShape((0, 1), 2)
Q3 = RegisterShape((0, 1, 2), 2)
Z = pauli_string("Z")


def z_at(v, shape):
    return embed(HermitianOp(Q1, Z), [v], shape).mat


def zsum(shape):
    return HermitianOp(shape, sum(z_at(v, shape) for v in shape.sites))


def chain_constant(om):
    """Per-site TCI constant from the Markov bound on a single-site chain."""
    part = [[v] for v in om.shape.sites]
    return tci_markov_bound(part, eta_diamond(om, part).eta) / om.shape.n


def test_dual_single_qubit():
    om = DensityState(Q1, np.eye(2) / 2)
    val = tci_dual_lower(om, seed=0)
    assert 0.49 <= val <= 0.5 + 1e-3


def test_dual_zero_observable():
    om = random_mixed(Q2, np.random.default_rng(0))
    assert dual_functional(np.zeros((4, 4)), om) == 0


def test_dual_below_product_constant():
    rng = np.random.default_rng(1)
    for n in (1, 2, 3):
        sh = RegisterShape(tuple(range(n)), 2)
        om = random_product(sh, rng)
        assert tci_dual_lower(om, iterations=20, seed=n) <= product_tci_constant(n) + 1e-3


def test_dual_below_markov_constant():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    assert tci_dual_lower(om, iterations=20, seed=2) <= 3 * chain_constant(om) + 1e-6


def test_dual_rejects_rank_deficient_state():
    with pytest.raises(NotPositiveError):
        tci_dual_lower(DensityState(Q1, np.diag([1.0, 0.0])))


def test_tail_prob_examples():
    half = DensityState(Q1, np.eye(2) / 2)
    O = HermitianOp(Q1, Z)
    assert tail_prob(O, half, 0.5) == 1
    assert tail_prob(O, half, 1.5) == 0
    assert tail_prob(O, half, 1.0) == 1
    assert tail_prob(O, half, 1.0, centered=False) == pytest.approx(0.5)
    assert tail_prob(zsum(Q2), DensityState(Q2, np.eye(4) / 4), 1.5) == pytest.approx(0.5)


def test_gaussian_bound_examples():
    half = DensityState(Q1, np.eye(2) / 2)
    O = HermitianOp(Q1, Z)
    general, comm = gaussian_tail_bound(O, half, 0.5, 0.5)
    assert comm == pytest.approx(2 * math.exp(-0.125), abs=1e-6)
    assert comm == pytest.approx(1.7650, abs=1e-4)
    assert comm <= general
    assert gaussian_tail_bound(O, half, 0.0, 0.5)[1] == pytest.approx(2)
    with pytest.raises(ValueError):
        gaussian_tail_bound(O, half, 0.5, 0.0)
    X = HermitianOp(Q1, pauli_string("X"))
    skew = random_mixed(Q1, np.random.default_rng(3))
    assert gaussian_tail_bound(X, skew, 0.5, 0.5)[1] is None


def test_tail_report_bounds_exact_tails():
    rng = np.random.default_rng(4)
    om = random_product(Q3, rng)
    diag = DensityState(Q3, np.diag(np.diag(om.mat)))
    rep = tail_report(zsum(Q3), diag, product_tci_constant(3), np.linspace(0, 6, 13))
    assert rep.commuting
    assert all(e <= b + 1e-12 for e, b in zip(rep.exact_tail, rep.gauss_bound))
    assert all(a >= b for a, b in zip(rep.exact_tail, rep.exact_tail[1:]))
    assert all(a >= b for a, b in zip(rep.gauss_bound, rep.gauss_bound[1:]))


def test_conjugated_lip_infinite_temperature():
    om = gibbs(ising_chain(3), 0.0)
    assert conjugated_lip_bound([((1,), 1.0)], om) == pytest.approx(4)
    # the enlarged supports {0, 1} and {1, 2} overlap on site 1
    assert conjugated_lip_bound([((0,), 1.0), ((2,), 0.5)], om) == pytest.approx(6)


def test_conjugated_lip_single_term():
    H = ising_chain(3, h=0.3)
    beta = 0.2
    om = gibbs(H, beta)
    touching = sum(np.linalg.norm(h.mat, 2) for s, h in H.terms if 1 in s)
    assert conjugated_lip_bound([((1,), 1.0)], om) == pytest.approx(4 * math.exp(beta * touching))


def test_conjugated_lip_dominates_lipschitz_constant():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    O = z_at(1, Q3)
    X = mat_power(om.mat, -0.5) @ O @ mat_power(om.mat, 0.5)
    bound = conjugated_lip_bound([((1,), 1.0, Z)], om)
    for part in ((X + X.conj().T) / 2, (X - X.conj().T) / 2j):
        assert lip_const(HermitianOp(Q3, part)).upper <= bound + 1e-9


def test_conjugated_lip_argument_errors():
    with pytest.raises(NotCommutingError):
        conjugated_lip_bound([((0,), 1.0)], gibbs(heisenberg_chain(3), 0.1))
    with pytest.raises(TypeError):
        conjugated_lip_bound([((0,), 1.0)], DensityState(Q1, np.eye(2) / 2))
    with pytest.raises(ValueError):
        conjugated_lip_bound([((0,), 1.0, 2 * Z)], gibbs(ising_chain(2), 0.1))


def test_laplace_check_examples():
    half = DensityState(Q1, np.eye(2) / 2)
    assert laplace_bound_check(HermitianOp(Q1, np.zeros((2, 2))), half, 0.5) == (0.0, 0.0)
    for t in (0.1, 1.0, 3.0):
        lhs, rhs = laplace_bound_check(HermitianOp(Q1, t * Z), half, 0.5)
        assert lhs == pytest.approx(math.log(math.cosh(t)))
        assert rhs == pytest.approx(t * t / 2)
        assert lhs <= rhs
    with pytest.raises(ValueError):
        laplace_bound_check(HermitianOp(Q1, np.eye(2)), half, 0.5)


def test_ensemble_equivalence_fixed_point():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    assert ensemble_equivalence(om.state, om, 1.0) == (0.0, 0.0, True)
    with pytest.raises(EnergyMismatch):
        ensemble_equivalence(random_mixed(Q3, np.random.default_rng(5)), om, 1.0)


def test_ensemble_equivalence_matched_states():
    H = ising_chain(3, h=0.3)
    om = gibbs(H, 0.1)
    C = chain_constant(om)
    target = energy(om.state, H)
    high = DensityState(Q3, np.eye(8) / 8)
    for E in (-2.3, -1.7, -0.3):
        low = microcanonical(H, E, 0.5)
        if energy(low, H) > target:
            continue
        mix = energy_matched_mixture(low, high, H, target)
        b, b2, ok = ensemble_equivalence(mix, om, C)
        assert ok
        w1 = w1_distance(mix, om.state).value_upper
        assert w1 / 3 <= b + 1e-6
        gap = trace_norm(average_marginal(mix) - average_marginal(om.state))
        assert gap <= 2 * w1 / 3 + 1e-6
        assert gap <= b2 + 1e-6
        assert entropy_w1_lower(mix, om.state) <= w1 + 1e-9


def test_microcanonical_bound_on_delta_grid():
    H = ising_chain(3, h=0.3)
    for beta in (0.1, 0.5, 1.0):
        om = gibbs(H, beta)
        C = chain_constant(om)
        for Delta in (0.3, 0.6, 1.0, 2.0, 5.0):
            E = argmax_shell_energy(H, beta, Delta)
            exact = rel_entropy(microcanonical(H, E, Delta), om)
            assert exact <= microcanonical_equivalence_bound(om, Delta, C) + 1e-9


def test_argmax_shell_energy_is_eigenvalue():
    H = ising_chain(3, h=0.3)
    w = np.linalg.eigvalsh(H.matrix())
    E = argmax_shell_energy(H, 0.5, 0.6)
    assert np.min(np.abs(w - E)) <= 1e-9
    # at infinite temperature the fullest shell wins
    assert argmax_shell_energy(H, 0.0, 100.0) == pytest.approx(w.max())
