"""Dual TCI estimates, Gaussian tails of Lipschitz observables and
canonical/microcanonical equivalence.

Throughout, ``C`` passed to the ensemble functions is a per-site constant:
the caller asserts ``C(omega) <= C n``.  Lipschitz constants inside bounds
always use the upper end of the bracket from ``lip_const``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .basis import local_basis
from .linalg import (
    DensityState,
    HermitianOp,
    NotPositiveError,
    embed_array,
    hermitize,
    mat_log,
    mat_power,
    op_norm,
    ptrace_array,
)
from .states import (
    EnergyMismatch,
    GibbsState,
    HypergraphHamiltonian,
    NotCommutingError,
    energy,
    entropy,
    microcanonical,
)
from .w1 import lip_const

MIN_LIP = 1e-4


@dataclass
class TciReport:
    """Bounds on a TCI constant together with an empirical test of one of them.

    ``bounds`` maps a method name (``markov``, ``curvature``, ``product``,
    ``dual_lower``, ``tested``) to its value.  ``passed`` means every
    certified upper ratio ``W1^2 / S`` stayed below ``constant + slack``;
    ``refuted`` means a certified lower ratio exceeded it.
    """

    bounds: dict
    empirical_max_ratio_upper: float
    empirical_max_ratio_lower: float
    trials: int
    seed: int
    passed: bool
    refuted: bool = False
    constant: float = float("nan")
    used: int = 0


def _dens(omega) -> DensityState:
    return omega.state if isinstance(omega, GibbsState) else omega


# ----------------------------------------------------------------------------
# dual estimate of the TCI constant
# ----------------------------------------------------------------------------

def _log_tr_exp(m) -> float:
    w = np.linalg.eigvalsh(hermitize(m))
    top = w.max()
    return float(top + math.log(np.sum(np.exp(w - top))))


def dual_functional(K: np.ndarray, omega: DensityState, log_omega: np.ndarray | None = None,
                    lip: float | None = None) -> float:
    """``4 [ln Tr exp(K + ln omega) - Tr omega K] / ||K||_L^2`` with the upper Lipschitz bracket.

    Every value is a lower bound on the TCI constant of ``omega``.
    Returns 0 when ``||K||_L < 1e-4``: below that scale the numerator is
    dominated by rounding and the ratio carries no information.
    """
    lo = mat_log(omega.mat) if log_omega is None else log_omega
    K = hermitize(K)
    if lip is None:
        lip = lip_const(HermitianOp(omega.shape, K)).upper
    if lip < MIN_LIP:
        return 0.0
    num = _log_tr_exp(K + lo) - float(np.real(np.vdot(omega.mat, K)))
    return 4 * max(num, 0.0) / lip ** 2


def _site_projection(K, d, n, v):
    """``K - I_v/d (x) Tr_v K``."""
    red = ptrace_array(K, d, n, [v])
    rest = [k for k in range(n) if k != v]
    return K - embed_array(red, d, n, rest) / d


def _proxy_lip(K, d, n):
    """``max_v ||P_v K||`` with a subgradient; within a factor 2 of the Lipschitz constant."""
    best, grad = -1.0, None
    for v in range(n):
        A = hermitize(_site_projection(K, d, n, v))
        w, u = np.linalg.eigh(A)
        j = int(np.argmax(np.abs(w)))
        if abs(w[j]) > best:
            best = abs(w[j])
            g = np.sign(w[j]) * np.outer(u[:, j], u[:, j].conj())
            grad = _site_projection(g, d, n, v)
    return best, hermitize(grad)


def _ascent(K, omega, lo, iterations):
    d, n = omega.shape.d, omega.shape.n
    D = omega.shape.dim

    def obj(K):
        p, gp = _proxy_lip(K, d, n)
        if p <= 1e-12:
            return 0.0, np.zeros_like(K)
        M = K + lo
        w, u = np.linalg.eigh(hermitize(M))
        e = np.exp(w - w.max())
        sig = (u * (e / e.sum())) @ u.conj().T
        num = w.max() + math.log(e.sum()) - float(np.real(np.vdot(omega.mat, K)))
        g = (sig - omega.mat) / p ** 2 - 2 * num * gp / p ** 3
        return num / p ** 2, hermitize(g)

    # the search runs over directions at a fixed scale of K
    scale = max(_proxy_lip(K, d, n)[0], 10 * MIN_LIP)

    def fix(K):
        K = K - np.real(np.vdot(omega.mat, K)) * np.eye(D)
        p = _proxy_lip(K, d, n)[0]
        return K * (scale / p) if p > 0 else K

    K = fix(K)
    val, g = obj(K)
    step = 0.1 * max(op_norm(K), 1e-3)
    for _ in range(iterations):
        gn = np.linalg.norm(g)
        if gn < 1e-14:
            break
        cand = fix(K + step * g / gn)
        cv, cg = obj(cand)
        if cv > val:
            K, val, g = cand, cv, cg
            step *= 1.5
        else:
            step *= 0.5
            if step < 1e-10:
                break
    return K


def tci_dual_lower(omega, iterations: int = 40, seed: int = 0, restarts: int = 2,
                   probe_t: Sequence[float] = (1e-2, 0.5)) -> float:
    """Lower bound on the TCI constant ``C(omega)`` from its dual formula.

    Probes single-site and site-summed traceless basis operators at the
    scales in ``probe_t`` (small scales capture the variance limit), then
    runs gradient ascent on a smooth surrogate from the best probe and from
    random starts.  Only values certified with the upper Lipschitz bracket
    are reported.
    """
    omega = _dens(omega)
    w = np.linalg.eigvalsh(omega.mat)
    if w[0] <= 1e-12:
        raise NotPositiveError("dual TCI estimate needs a full-rank state")
    lo = mat_log(omega.mat)
    d, n = omega.shape.d, omega.shape.n
    D = omega.shape.dim
    B = local_basis(d)[1:]
    cands = []
    for b in B:
        for v in range(n):
            cands.append(embed_array(b, d, n, [v]))
        if n > 1:
            cands.append(sum(embed_array(b, d, n, [v]) for v in range(n)))
    best, best_K = 0.0, None
    for c in cands:
        for t in probe_t:
            K = t * c
            K = K - np.real(np.vdot(omega.mat, K)) * np.eye(D)
            val = dual_functional(K, omega, lo)
            if val > best:
                best, best_K = val, K
    rng = np.random.default_rng(seed)
    starts = [] if best_K is None else [best_K]
    for _ in range(restarts):
        g = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
        starts.append(0.1 * hermitize(g) / math.sqrt(D))
    for K0 in starts:
        K = _ascent(K0, omega, lo, iterations)
        best = max(best, dual_functional(K, omega, lo))
    return float(best)


def product_tci_constant(n: int) -> float:
    """TCI constant ``n/2`` valid for every product state on ``n`` sites."""
    return n / 2


# ----------------------------------------------------------------------------
# tails
# ----------------------------------------------------------------------------

def tail_prob(O: HermitianOp, omega, r: float, centered: bool = True) -> float:
    """Probability that measuring ``O`` gives ``lam >= r`` (or ``|lam - mean| >= r``)."""
    omega = _dens(omega)
    w, u = np.linalg.eigh(O.mat)
    p = np.real(np.einsum("ij,ik,kj->j", u.conj(), omega.mat, u))
    eps = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    if centered:
        m = float(np.real(np.vdot(omega.mat, O.mat)))
        sel = np.abs(w - m) >= r - eps
    else:
        sel = w >= r - eps
    return float(min(1.0, max(0.0, p[sel].sum())))


def _lip_upper(X: np.ndarray, shape) -> float:
    return lip_const(HermitianOp(shape, hermitize(X))).upper


def _gauss(r, denom):
    r = np.asarray(r, dtype=float)
    if denom <= 0:
        return np.where(r > 0, 0.0, 2.0)
    return 2 * np.exp(-r ** 2 / denom)


def gaussian_tail_bound(O: HermitianOp, omega, r, c: float):
    """Gaussian bounds on ``P(|O - Tr[omega O]| >= r)`` for a TCI constant ``c``.

    Returns ``(general, commuting)``.  ``general`` uses the Lipschitz
    constants of the real and imaginary parts of ``omega^-1/2 O omega^1/2``;
    ``commuting`` is ``None`` unless ``||[O, omega]|| <= 1e-10``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    omega = _dens(omega)
    X = mat_power(omega.mat, -0.5, clip=True) @ O.mat @ mat_power(omega.mat, 0.5, clip=True)
    XR = (X + X.conj().T) / 2
    XI = (X - X.conj().T) / 2j
    L = max(_lip_upper(XR, O.shape), _lip_upper(XI, O.shape))
    general = _gauss(r, 4 * c * L ** 2)
    comm = O.mat @ omega.mat - omega.mat @ O.mat
    commuting = None
    if op_norm(comm) <= 1e-10:
        commuting = _gauss(r, c * _lip_upper(O.mat, O.shape) ** 2)
    if np.ndim(r) == 0:
        general = float(general)
        commuting = None if commuting is None else float(commuting)
    return general, commuting


@dataclass
class TailReport:
    observable: HermitianOp = field(repr=False)
    state: DensityState = field(repr=False)
    r: list
    exact_tail: list
    gauss_bound: list
    lipschitz_used: float
    commuting: bool


def tail_report(O: HermitianOp, omega, c: float, r_grid: Sequence[float]) -> TailReport:
    """Exact centered tails and the sharpest applicable Gaussian bound on a grid."""
    omega = _dens(omega)
    general, comm = gaussian_tail_bound(O, omega, np.asarray(r_grid, float), c)
    is_comm = comm is not None
    bound = comm if is_comm else general
    exact = [tail_prob(O, omega, r) for r in r_grid]
    return TailReport(O, omega, list(map(float, r_grid)), exact, [float(b) for b in bound],
                      _lip_upper(O.mat, O.shape), is_comm)


def conjugated_lip_bound(terms: Sequence, omega_beta: GibbsState) -> float:
    """Bound on the Lipschitz constants of the parts of ``omega^-1/2 O omega^1/2``.

    ``terms`` lists ``(sites, lam)`` or ``(sites, lam, O_A)`` with
    ``||O_A|| <= 1``.  For a commuting Hamiltonian the conjugated term is
    supported on ``A`` enlarged by every hyperedge meeting ``A``; the bound
    is ``4 max_i sum_{A: i in enlarged A} |lam_A| exp(beta sum_{B meets A} ||h_B||)``.
    """
    if not isinstance(omega_beta, GibbsState):
        raise TypeError("need a GibbsState")
    if not omega_beta.commuting:
        raise NotCommutingError("the bound assumes a commuting Hamiltonian")
    H = omega_beta.hamiltonian
    beta = omega_beta.beta
    norms = [(set(s), op_norm(h)) for s, h in H.terms]
    per_site = {v: 0.0 for v in H.shape.sites}
    for t in terms:
        if len(t) < 2:
            raise ValueError("each term needs (sites, lam)")
        sites, lam = set(t[0]), float(t[1])
        if len(t) > 2 and t[2] is not None and op_norm(np.asarray(t[2])) > 1 + 1e-12:
            raise ValueError("decomposition terms need operator norm at most 1")
        meet = [(B, nb) for B, nb in norms if B & sites]
        grown = set(sites).union(*[B for B, _ in meet]) if meet else set(sites)
        weight = abs(lam) * math.exp(beta * sum(nb for _, nb in meet))
        for v in grown:
            per_site[v] += weight
    return 4 * max(per_site.values(), default=0.0)


def laplace_bound_check(K: HermitianOp, omega, c_prime: float) -> tuple[float, float]:
    """``(ln Tr[omega e^K], c'/4 ||K||_L^2)`` for a centered ``K``."""
    omega = _dens(omega)
    mean = float(np.real(np.vdot(omega.mat, K.mat)))
    if abs(mean) > 1e-9 * max(1.0, op_norm(K.mat)):
        raise ValueError("K must satisfy Tr[omega K] = 0")
    w, u = np.linalg.eigh(K.mat)
    top = w.max() if w.size else 0.0
    eK = (u * np.exp(w - top)) @ u.conj().T
    lhs = top + math.log(float(np.real(np.vdot(omega.mat, eK))))
    L = lip_const(K).upper
    return float(lhs), float(c_prime / 4 * L ** 2)


# ----------------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------------

def _check_energy(rho, omega_beta: GibbsState):
    H = omega_beta.hamiltonian
    scale = max(1.0, op_norm(H.matrix()))
    e_r, e_w = energy(rho, H), energy(omega_beta.state, H)
    if abs(e_r - e_w) > 1e-8 * scale:
        raise EnergyMismatch(f"energies differ: {e_r} vs {e_w}")


def ensemble_equivalence(rho: DensityState, omega_beta: GibbsState, C: float) -> tuple[float, float, bool]:
    """Bounds for an energy-matched state ``rho`` against the Gibbs state.

    Returns ``(sqrt(C dS / n), 2 sqrt(C dS / n), True)`` with
    ``dS = S(omega) - S(rho)``; the first bounds ``||rho - omega||_W1 / n``,
    the second ``||Lambda(rho) - Lambda(omega)||_1`` with ``Lambda`` the
    average one-site marginal.
    """
    _check_energy(rho, omega_beta)
    n = omega_beta.shape.n
    dS = max(0.0, entropy(omega_beta.state) - entropy(rho))
    b = math.sqrt(C * dS / n)
    return b, 2 * b, True


def average_marginal(rho) -> np.ndarray:
    """``Lambda(rho) = (1/n) sum_v rho_v`` as a ``d x d`` matrix."""
    rho = _dens(rho)
    d, n = rho.shape.d, rho.shape.n
    return sum(ptrace_array(rho.mat, d, n, [k for k in range(n) if k != v]) for v in range(n)) / n


def entropy_w1_lower(rho, omega) -> float:
    """``(S(omega) - S(rho) - ln(n+1) - 1) / ln(d^2 n)``, a lower bound on ``||rho - omega||_W1``."""
    rho, omega = _dens(rho), _dens(omega)
    d, n = omega.shape.d, omega.shape.n
    return (entropy(omega) - entropy(rho) - math.log(n + 1) - 1) / math.log(d * d * n)


def argmax_shell_energy(H: HypergraphHamiltonian, beta: float, Delta: float) -> float:
    """``argmax_E exp(-beta E) Tr P(E, Delta)`` over shells ``(E - Delta, E]``.

    The count only jumps at eigenvalues and ``exp(-beta E)`` decreases, so
    the maximum is attained with ``E`` equal to an eigenvalue.
    """
    w = np.linalg.eigvalsh(hermitize(H.matrix()))
    eps = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    best, best_E = -math.inf, float(w[0])
    for E in np.unique(np.round(w, 12)):
        cnt = int(np.sum((w > E - Delta + eps) & (w <= E + eps)))
        if cnt == 0:
            continue
        val = -beta * E + math.log(cnt)
        if val > best + 1e-12:
            best, best_E = val, float(E)
    return best_E


def microcanonical_equivalence_bound(omega_beta: GibbsState, Delta: float, C: float,
                                     E: float | None = None, lip: float | None = None) -> float:
    """``beta Delta + ln(4 + 4 sqrt(C n ln 4) ||H||_L / Delta)``.

    The bound on ``S(omega_{E,Delta} || omega)`` is proven for the shell
    maximizing ``exp(-beta E) Tr P(E, Delta)``, which is used when ``E`` is
    omitted.  Raises ``ValueError`` on an empty shell.
    """
    H = omega_beta.hamiltonian
    if E is None:
        E = argmax_shell_energy(H, omega_beta.beta, Delta)
    microcanonical(H, E, Delta)
    if lip is None:
        lip = lip_const(H.op()).upper
    n = H.shape.n
    return omega_beta.beta * Delta + math.log(4 + 4 * math.sqrt(C * n * math.log(4)) * lip / Delta)
