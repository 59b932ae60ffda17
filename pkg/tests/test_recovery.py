import numpy as np
import pytest
from scipy import integrate

from qtci.linalg import (
    DensityState,
    HermitianOp,
    RegisterShape,
    ShapeError,
    marginal,
    mat_power,
    mu0_density,
    trace_norm,
)
from qtci.recovery import (
    MarkovConditionError,
    chain_recovery_bounds,
    eta_tilde_map,
    extend_channel,
    markov_locality_check,
    petz_rotated,
    psi_avg,
    psi_local,
    psi_v,
    recoverability_gap,
)
from qtci.states import (
    gibbs,
    heisenberg_chain,
    ising_chain,
    random_diagonal,
    random_mixed,
    random_product,
    rel_entropy,
)

Q2 = RegisterShape((0, 1), 2)
Q3 = RegisterShape((0, 1, 2), 2)


def petz_by_integration(omega, rho_a):
    """Recovery ``A -> AB`` for two sites by adaptive integration of the defining formula."""
    w_ab = omega.mat
    w_a = marginal(omega, [0]).mat

    def f(t):
        left = mat_power(w_ab, (1 - 1j * t) / 2)
        inner = mat_power(w_a, (1j * t - 1) / 2) @ rho_a @ mat_power(w_a, -(1 + 1j * t) / 2)
        right = mat_power(w_ab, (1 + 1j * t) / 2)
        return (mu0_density(t) * (left @ np.kron(inner, np.eye(2)) @ right)).ravel()

    val, _ = integrate.quad_vec(f, -40, 40, epsabs=1e-12, epsrel=1e-12)
    return val.reshape(4, 4)


def test_product_base_appends_marginal():
    rng = np.random.default_rng(0)
    om = random_product(Q2, rng)
    phi = petz_rotated(om, [0], [1])
    r = random_mixed(RegisterShape((0,), 2), rng)
    want = np.kron(r.mat, marginal(om, [1]).mat)
    assert np.allclose(phi.apply_array(r.mat), want, atol=1e-9)


def test_fixed_point_and_cptp():
    om = gibbs(heisenberg_chain(3), 0.8).state
    phi = petz_rotated(om, [0, 1], [2])
    out = phi.apply_array(marginal(om, [0, 1]).mat)
    assert trace_norm(out - om.mat) <= 1e-7
    neg, tp = phi.cptp_defect()
    assert neg <= 1e-7 and tp <= 1e-7
    assert not phi.clipped


def test_matches_direct_integration():
    rng = np.random.default_rng(1)
    om = random_mixed(Q2, rng)
    r = random_mixed(RegisterShape((0,), 2), rng).mat
    phi = petz_rotated(om, [0], [1])
    exact = petz_rotated(om, [0], [1], exact=True)
    ref = petz_by_integration(om, r)
    assert np.allclose(phi.apply_array(r), ref, atol=1e-7)
    assert np.allclose(exact.apply_array(r), ref, atol=1e-9)


def test_classical_reduction():
    rng = np.random.default_rng(2)
    om = random_diagonal(Q3, rng)
    p = np.real(np.diag(om.mat)).reshape(2, 2, 2)
    phi = petz_rotated(om, [0, 1], [2])
    for x0 in range(2):
        for x1 in range(2):
            e = np.zeros((4, 4))
            e[2 * x0 + x1, 2 * x0 + x1] = 1
            got = phi.apply_array(e)
            cond = p[x0, x1] / p[x0, x1].sum()
            want = np.zeros((8, 8))
            for y in range(2):
                k = 4 * x0 + 2 * x1 + y
                want[k, k] = cond[y]
            assert np.allclose(got, want, atol=1e-7)


def test_recovery_argument_errors():
    om = random_mixed(Q3, np.random.default_rng(3))
    with pytest.raises(ShapeError):
        petz_rotated(om, [0], [0])
    with pytest.raises(ShapeError):
        petz_rotated(om, [], [1])
    with pytest.raises(ShapeError):
        petz_rotated(om, [0], [9])


def test_rank_deficient_base_is_clipped():
    v = np.zeros(4)
    v[0] = 1
    pure = DensityState(Q2, np.outer(v, v))
    phi = petz_rotated(pure, [0], [1])
    assert phi.clipped


def test_psi_infinite_temperature():
    om = gibbs(ising_chain(3), 0.0)
    rng = np.random.default_rng(4)
    r = random_mixed(Q3, rng)
    out = psi_v(om, 1).apply_array(r.mat)
    red = marginal(r, [0, 2]).mat.reshape(2, 2, 2, 2)
    want = np.einsum("acbd,ef->aecbfd", red, np.eye(2) / 2).reshape(8, 8)
    assert np.allclose(out, want, atol=1e-9)


def test_psi_fixed_points_and_cptp():
    om = gibbs(ising_chain(3, h=0.3), 0.7)
    for v in range(3):
        P = psi_v(om, v)
        assert trace_norm(P.apply_array(om.mat) - om.mat) <= 1e-7
        assert P.is_cptp(1e-7)
    avg = psi_avg(om)
    assert trace_norm(avg.apply_array(om.mat) - om.mat) <= 1e-7


def test_psi_locality_for_commuting_chain():
    om = gibbs(ising_chain(4, h=0.2), 0.5)
    for v in (0, 2):
        full = psi_v(om, v)
        local = psi_local(om, v)
        assert local.in_shape.sites == om.hamiltonian.neighborhood(v)
        ext = extend_channel(local, om.shape)
        assert np.max(np.abs(full.superop - ext.superop)) <= 1e-7
    two = gibbs(ising_chain(2), 0.1)
    assert psi_local(two, 0).in_shape.sites == (0, 1)


def test_psi_data_processing_and_concavity():
    om = gibbs(ising_chain(3, h=0.3), 0.6)
    maps = [psi_v(om, v) for v in range(3)]
    avg = psi_avg(om)
    rng = np.random.default_rng(5)
    for _ in range(10):
        r = random_mixed(Q3, rng)
        S = rel_entropy(r, om)
        outs = [DensityState.from_matrix(Q3, m.apply_array(r.mat)) for m in maps]
        Savg = rel_entropy(DensityState.from_matrix(Q3, avg.apply_array(r.mat)), om)
        assert Savg <= S + 1e-9
        mean_drop = np.mean([S - rel_entropy(o, om) for o in outs])
        assert mean_drop <= S - Savg + 1e-8


def test_recoverability_examples():
    rng = np.random.default_rng(6)
    om = gibbs(heisenberg_chain(2), 0.5).state
    drop, rhs = recoverability_gap(om, om, [0], [1])
    assert abs(drop) < 1e-10 and rhs < 1e-14
    prod = random_product(Q2, rng)
    r = DensityState(Q2, np.kron(random_mixed(RegisterShape((0,), 2), rng).mat,
                                 marginal(prod, [1]).mat))
    drop, rhs = recoverability_gap(r, prod, [0], [1])
    assert abs(drop) < 1e-10 and rhs < 1e-14
    for _ in range(10):
        r = random_mixed(Q2, rng)
        drop, rhs = recoverability_gap(r, om, [0], [1])
        assert drop >= rhs - 1e-7


def test_chain_bounds():
    om = gibbs(ising_chain(3, h=0.3), 0.5)
    cb = chain_recovery_bounds(om.state, om, [[0], [1], [2]])
    assert cb.S == pytest.approx(0, abs=1e-10) and cb.sum_dists < 1e-7
    rng = np.random.default_rng(7)
    r = random_mixed(Q3, rng)
    one = chain_recovery_bounds(r, om, [[0, 1, 2]])
    assert one.sum_dists == pytest.approx(trace_norm(r - om.state))
    assert one.pinsker_ok and one.improved_ok
    for _ in range(10):
        cb = chain_recovery_bounds(random_mixed(Q3, rng), om, [[0], [1], [2]])
        assert cb.pinsker_ok and cb.improved_ok
    with pytest.raises(ShapeError):
        chain_recovery_bounds(r, om, [[0], [1]])


def test_markov_locality():
    rng = np.random.default_rng(8)
    assert markov_locality_check(random_product(Q3, rng), [[0], [1], [2]], 3)
    om = gibbs(ising_chain(4, h=0.3), 0.4)
    assert markov_locality_check(om, [[0], [1], [2], [3]], 3)
    assert markov_locality_check(om, [[0], [1], [2], [3]], 4)
    with pytest.raises(MarkovConditionError):
        markov_locality_check(random_mixed(Q3, rng), [[0], [1], [2]], 3)
    with pytest.raises(ValueError):
        markov_locality_check(om, [[0], [1], [2], [3]], 2)


def test_eta_tilde_is_channel_to_next_block():
    om = gibbs(ising_chain(3, h=0.3), 0.4)
    T = eta_tilde_map(om, [[0], [1], [2]], 3)
    assert T.in_shape.sites == (1,) and T.out_shape.sites == (2,)
    assert T.is_cptp(1e-7)
    x = marginal(om.state, [1]).mat
    assert np.allclose(T.apply_array(x), marginal(om.state, [2]).mat, atol=1e-8)


def test_recovery_acts_on_operators():
    om = gibbs(ising_chain(2, h=0.3), 0.4)
    phi = petz_rotated(om.state, [0], [1])
    out = phi(HermitianOp(RegisterShape((0,), 2), np.diag([1.0, -1.0])))
    assert out.shape == Q2
