import math

import numpy as np
import pytest

from qtci.dobrushin import (
    ChainPartition,
    MarkovConditionError,
    decay_profile,
    eta_diamond,
    eta_empirical,
    eta_from_maxdiv,
    fit_decay,
    tci_markov_bound,
    tci_markov_refined,
    tci_nonmarkov_bound,
    verify_tci_empirical,
)
from qtci.linalg import DensityState, HermitianOp, RegisterShape, trace_norm
from qtci.recovery import petz_rotated
from qtci.states import gibbs, heisenberg_chain, ising_chain, random_mixed, random_product
from qtci.w1 import w1_primal

Q3 = RegisterShape((0, 1, 2), 2)
SINGLE3 = [[0], [1], [2]]


def test_partition_metadata():
    P = ChainPartition([[0, 1], [2], [3, 4]])
    assert P.m == 3 and P.K == 2
    assert P.prefix(2) == [0, 1, 2]
    assert ChainPartition.singletons([0, 1, 2]).blocks == ((0,), (1,), (2,))
    with pytest.raises(ValueError):
        ChainPartition([[0], [0]])
    with pytest.raises(ValueError):
        ChainPartition([[0], []])
    with pytest.raises(ValueError):
        P.check_covers([0, 1, 2])


def test_eta_product_state_is_zero():
    om = random_product(Q3, np.random.default_rng(0))
    est = eta_diamond(om, SINGLE3)
    assert est.eta <= 1e-7 and est.method == "diamond_bound"
    mx = eta_from_maxdiv(om, SINGLE3)
    assert mx.a == pytest.approx(0, abs=1e-10) and mx.eta <= 1e-5


def test_eta_infinite_temperature():
    om = gibbs(ising_chain(3), 0.0)
    assert eta_diamond(om, SINGLE3).eta <= 1e-7
    mx = eta_from_maxdiv(om, SINGLE3)
    assert mx.applicable and mx.eta <= 1e-5


def test_eta_monotone_in_beta():
    H = ising_chain(3, h=0.3)
    etas = [eta_diamond(gibbs(H, b), SINGLE3).eta for b in (0.0, 0.02, 0.05, 0.1, 0.2, 0.4)]
    assert all(a <= b + 1e-7 for a, b in zip(etas, etas[1:]))
    assert etas[-1] < 1


def test_eta_bracketed_by_sampling():
    om = gibbs(ising_chain(3, h=0.3), 0.2)
    up = eta_diamond(om, SINGLE3)
    emp = eta_empirical(om, SINGLE3, trials=32, seed=1)
    assert emp.method == "empirical_lower"
    assert emp.eta <= up.eta + 1e-6
    assert up.lower <= up.eta + 1e-12
    # the bound is tight on this chain
    assert up.eta - emp.eta <= 1e-3


def test_eta_maxdiv_dominates_sampling():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    mx = eta_from_maxdiv(om, SINGLE3)
    assert mx.applicable and mx.a < 0.5
    assert mx.eta == pytest.approx(math.sqrt(2 * mx.a))
    assert mx.eta >= eta_empirical(om, SINGLE3, trials=32, seed=2).eta - 1e-9


def test_eta_maxdiv_not_applicable_at_low_temperature():
    om = gibbs(ising_chain(3), 3.0)
    mx = eta_from_maxdiv(om, SINGLE3)
    assert not mx.applicable and mx.eta == math.inf and mx.a >= 0.5


def test_eta_requires_markov_chain():
    om = gibbs(heisenberg_chain(3), 1.0)
    with pytest.raises(MarkovConditionError):
        eta_diamond(om, SINGLE3)


def test_markov_bound_arithmetic():
    assert tci_markov_bound(ChainPartition.singletons(range(5)), 0.0) == pytest.approx(40)
    assert tci_markov_bound(ChainPartition.singletons(range(4)), 0.5) == pytest.approx(72)
    assert tci_markov_bound([[0, 1], [2, 3]], 0.0) == pytest.approx(2 * 2 * 4 * 4)
    assert tci_markov_refined(0.0, SINGLE3, 0.3) == 0
    S = 0.2
    want = (1 / 0.7 + 1) * 6 * math.sqrt(1 - math.exp(-S / 3))
    assert tci_markov_refined(S, SINGLE3, 0.3) == pytest.approx(want)
    with pytest.raises(ValueError):
        tci_markov_bound(SINGLE3, 1.0)


def test_nonmarkov_bound():
    bound, k0 = tci_nonmarkov_bound(16, 1.0, 0.5)
    assert k0 == 2
    assert bound == pytest.approx(8 * 16 * (2 + 2 / 0.5 - math.log(16) / (2 * math.log(0.5))) ** 2)
    bound, k0 = tci_nonmarkov_bound(8, 0.0, 0.5)
    assert math.isfinite(bound) and k0 == 0
    for C in (1.0, 0.3, 0.05):
        vals = [tci_nonmarkov_bound(n, C, 0.4)[0] for n in range(1, 60)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        tci_nonmarkov_bound(4, 1.0, 1.0)
    with pytest.raises(ValueError):
        tci_nonmarkov_bound(4, 1.0, 0.0)


def test_verify_product_constant():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3):
        sh = RegisterShape(tuple(range(n)), 2)
        rep = verify_tci_empirical(random_product(sh, rng), n / 2, trials=15, seed=n)
        assert rep.passed and not rep.refuted
        assert rep.used <= rep.trials == 15
        assert rep.empirical_max_ratio_lower <= rep.empirical_max_ratio_upper + 1e-9
    with pytest.raises(ValueError):
        verify_tci_empirical(random_product(Q3, rng), 0.0)


def test_verify_is_seeded_and_worker_independent():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    a = verify_tci_empirical(om, 30.0, trials=8, seed=4)
    b = verify_tci_empirical(om, 30.0, trials=8, seed=4, workers=3)
    assert a.empirical_max_ratio_upper == b.empirical_max_ratio_upper
    assert a.empirical_max_ratio_lower == b.empirical_max_ratio_lower


def test_verify_detects_too_small_constant():
    om = gibbs(ising_chain(2, h=0.3), 0.1)
    rep = verify_tci_empirical(om, 0.05, trials=10, seed=5)
    assert not rep.passed and rep.refuted


def test_markov_constant_passes_on_chain():
    om = gibbs(ising_chain(3, h=0.3), 0.2)
    eta = eta_diamond(om, SINGLE3).eta
    rep = verify_tci_empirical(om, tci_markov_bound(SINGLE3, eta), trials=20, seed=6)
    assert rep.passed and not rep.refuted


def test_propagated_difference_bound():
    # ||(Phi_m o .. o Phi_(i+1))(X)||_W1 <= K (1/(1-eta) + 1) ||X||_1
    # whenever X on A_1..A_i vanishes under Tr_{A_(i-1) A_i}
    H = ising_chain(4, h=0.3)
    om = gibbs(H, 0.3).state
    eta = eta_diamond(om, [[0], [1], [2], [3]]).eta
    maps = {j: petz_rotated(om, list(range(j - 1)), [j - 1]) for j in (3, 4)}
    rng = np.random.default_rng(7)
    for i in (2, 3):
        sh = RegisterShape(tuple(range(i)), 2)
        for _ in range(3):
            r = random_mixed(sh, rng).mat
            D = 2 ** i
            # remove the part seen by Tr over the last two sites
            far = 2 ** (i - 2)
            red = np.einsum("aibi->ab", r.reshape(far, 4, far, 4))
            X = r - np.kron(red, np.eye(4) / 4)
            cur = X
            for j in range(i + 1, 5):
                cur = maps[j].apply_array(cur)
            val = w1_primal(HermitianOp(RegisterShape((0, 1, 2, 3), 2), cur)).value_upper
            assert val <= (1 / (1 - eta) + 1) * trace_norm(X) + 1e-6
            assert X.shape == (D, D)


def test_decay_profile_and_fit():
    om = gibbs(ising_chain(4, h=0.3), 0.3)
    prof = decay_profile(om, trials=4, seed=8)
    assert set(prof) == {"recover", "propagate"}
    # for a Markov chain Phi_i only touches A_(i-1) A_i, so tracing both is exact
    assert max(v for k, v in prof["recover"].items() if k >= 1) <= 1e-7
    C, eta = fit_decay(prof)
    assert C >= 0 and 0 <= eta <= 1
    C, eta = fit_decay({"recover": {1: 0.5, 2: 0.25, 3: 0.125}, "propagate": {}})
    assert C == pytest.approx(1.0) and eta == pytest.approx(0.5)
    assert fit_decay({"recover": {}, "propagate": {}}) == (0.0, 0.0)


def test_density_inputs_accepted():
    om = gibbs(ising_chain(3, h=0.3), 0.1)
    st = DensityState(Q3, om.mat)
    assert eta_diamond(st, SINGLE3).eta == pytest.approx(eta_diamond(om, SINGLE3).eta, abs=1e-9)
