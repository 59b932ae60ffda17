"""Quantum W1 norm, quantum Lipschitz constant and related checks.

The primal problem

    ||X||_W1 = min 1/2 sum_v ||X_v||_1   s.t.  X = sum_v X_v,  Tr_v X_v = 0

is solved with ADMM in the local product basis, where the consistency
constraint decouples coefficient by coefficient. The ADMM multipliers are
turned into a dual witness ``K`` whose Lipschitz constant is certified by
an explicit decomposition, so every result carries a two-sided bracket.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .basis import from_coeffs, support_mask, to_coeffs
from .channels import ChannelRep, NotCPTPError
from .linalg import (
    DensityState,
    HermitianOp,
    ShapeError,
    embed_array,
    hermitize,
    ptrace_array,
    trace_norm,
)

TRACELESS_TOL = 1e-9


class NotTracelessError(ValueError):
    pass


# ----------------------------------------------------------------------------
# result types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class W1Certificate:
    """Two-sided bracket on ``||X||_W1``.

    ``decomposition`` is a feasible primal point whose half trace-norm sum
    is ``value_upper``; ``witness`` is an operator with certified
    ``||K||_L <= 1`` and ``Tr[X K] = value_lower``.
    """

    value_upper: float
    value_lower: float
    decomposition: tuple = field(repr=False)
    witness: HermitianOp | None = field(repr=False)
    iterations: int = 0
    converged: bool = True

    @property
    def gap(self) -> float:
        return self.value_upper - self.value_lower

    @property
    def value(self) -> float:
        return self.value_upper


@dataclass(frozen=True, eq=False)
class LipschitzBracket:
    lower: float
    upper: float
    per_site_witnesses: tuple = field(repr=False, default=())

    def __contains__(self, x) -> bool:
        return self.lower - 1e-9 <= x <= self.upper + 1e-9


# ----------------------------------------------------------------------------
# coefficient-space helpers
# ----------------------------------------------------------------------------

class _Split:
    """Projection onto ``{(Y_v) : Y_v in S_v, sum_v Y_v = X}`` in coefficients."""

    def __init__(self, d: int, n: int):
        self.d, self.n = d, n
        self.mask = support_mask(d, n).astype(float)
        size = self.mask.sum(axis=0)
        self.inv = np.where(size > 0, 1.0 / np.maximum(size, 1), 0.0)

    def project(self, W, x):
        corr = (x - (self.mask * W).sum(axis=0)) * self.inv
        return self.mask * (W + corr)

    def average(self, lam):
        return (self.mask * lam).sum(axis=0) * self.inv

    def mats(self, c):
        return from_coeffs(c, self.d, self.n)

    def coeffs(self, m):
        return to_coeffs(m, self.d, self.n)


def _half_trace_norms(mats) -> np.ndarray:
    return 0.5 * np.abs(np.linalg.eigvalsh(mats)).sum(axis=-1)


def _soft(w, tau):
    return np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)


def _orderings(n: int):
    if n <= 4:
        return list(itertools.permutations(range(n)))
    base = list(range(n))
    out = []
    for k in range(n):
        rot = base[k:] + base[:k]
        out += [tuple(rot), tuple(reversed(rot))]
    return out


def _telescoping(x, sp: _Split):
    """Best decomposition among 'assign each coefficient to the first site
    of its support', over site orderings, plus the even split."""
    mask = sp.mask.astype(bool)
    cands = [sp.project(np.zeros_like(sp.mask), x)]
    for order in _orderings(sp.n):
        y = np.zeros_like(sp.mask)
        taken = np.zeros(x.shape, dtype=bool)
        for v in order:
            sel = mask[v] & ~taken
            y[v, sel] = x[sel]
            taken |= sel
        cands.append(y)
    vals = [_half_trace_norms(sp.mats(y)).sum() for y in cands]
    k = int(np.argmin(vals))
    return cands[k], float(vals[k])


def _dual_from_multiplier(lam, x, sp: _Split):
    """Certified witness from per-block multipliers with ``||lam_v||_inf <= 1/2``.

    ``K`` averages the multipliers over each coefficient's support; the
    blocks ``M_v = K - I_v (x) G_v`` reuse the multiplier's components that
    act trivially on ``v``, so ``||K||_L <= 2 max_v ||M_v||_inf``.
    """
    K = sp.average(lam)
    M = sp.mask * K + (1 - sp.mask) * lam
    L = 2 * np.abs(np.linalg.eigvalsh(sp.mats(M))).max()
    val = float(x @ K)
    if L <= 1e-300 or val <= 0:
        return 0.0, K * 0.0, 1.0
    return val / L, K, L


def _local_witness(X: np.ndarray, d: int, n: int):
    """Witness ``sum_v 1/2 sign(X_v)`` built from single-site marginals."""
    D = d ** n
    K = np.zeros((D, D), dtype=complex)
    val = 0.0
    L = 0.0
    for v in range(n):
        m = ptrace_array(X, d, n, [k for k in range(n) if k != v])
        w, u = np.linalg.eigh(hermitize(m))
        s = 0.5 * np.sign(np.where(np.abs(w) > 1e-14, w, 0.0))
        k = (u * s) @ u.conj().T
        val += 0.5 * np.abs(w).sum()
        L = max(L, float(s.max() - s.min()))
        K += embed_array(k, d, n, [v])
    if L <= 0 or val <= 0:
        return 0.0, np.zeros((D, D)), 1.0
    return val / L, K, L


def _check_traceless(X: HermitianOp):
    tr = X.trace()
    if abs(tr) > TRACELESS_TOL * max(1.0, trace_norm(X)):
        raise NotTracelessError(f"W1 norm needs a traceless operator, trace = {tr:.3e}")


# ----------------------------------------------------------------------------
# W1 norm
# ----------------------------------------------------------------------------

# residual balancing is kept gentle: the initial penalty 1/||X||_inf is
# already well scaled and frequent updates stall the iteration
BALANCE_EVERY, BALANCE_MU, BALANCE_TAU = 500, 100.0, 2.0


def w1_primal(X: HermitianOp, tol: float = 1e-6, max_iter: int = 20000,
              check_every: int = 20, rho: float | None = None,
              relax: float = 1.6) -> W1Certificate:
    """Certified bracket on ``||X||_W1`` by ADMM.

    Parameters
    ----------
    X : HermitianOp
        Traceless operator.
    tol : float
        Target for ``value_upper - value_lower``; iteration stops once the
        certified gap is below it.
    max_iter : int
        Iteration cap. The bracket stays valid when the cap is hit, it is
        only wider (``converged`` is then False).
    check_every : int
        Interval between certificate evaluations.
    rho : float, optional
        Initial ADMM penalty. Adapted by residual balancing.
    relax : float
        Over-relaxation factor in ``(0, 2)``.
    """
    _check_traceless(X)
    d, n = X.shape.d, X.shape.n
    sp = _Split(d, n)
    x = sp.coeffs(X.mat)
    x[0] = 0.0
    if np.max(np.abs(x)) < 1e-15:
        return W1Certificate(0.0, 0.0, (), HermitianOp(X.shape, np.zeros((X.dim, X.dim))), 0, True)

    Y, best_up = _telescoping(x, sp)
    best_Y = Y.copy()
    lo, Kloc, Lloc = _local_witness(X.mat, d, n)
    best_lo, best_K = lo, sp.coeffs(Kloc) / Lloc

    def done():
        return best_up - best_lo <= tol

    it = 0
    if not done():
        U = np.zeros_like(Y)
        if rho is None:
            rho = 1.0 / max(np.abs(np.linalg.eigvalsh(sp.mats(Y))).max(), 1e-12)
        for it in range(1, max_iter + 1):
            V = Y - U
            w, u = np.linalg.eigh(sp.mats(V))
            Xm = (u * _soft(w, 0.5 / rho)[:, None, :]) @ u.conj().transpose(0, 2, 1)
            Xc = sp.coeffs(Xm)
            Xh = relax * Xc + (1 - relax) * Y
            Y_new = sp.project(Xh + U, x)
            r = np.linalg.norm(Xc - Y_new)
            s = rho * np.linalg.norm(Y_new - Y)
            U += Xh - Y_new
            Y = Y_new
            if it % check_every == 0:
                up = float(_half_trace_norms(sp.mats(Y)).sum())
                if up < best_up:
                    best_up, best_Y = up, Y.copy()
                lo, K, L = _dual_from_multiplier(rho * (V - Xc), x, sp)
                if lo > best_lo:
                    best_lo, best_K = lo, K / L
                if done():
                    break
            if it % BALANCE_EVERY == 0:
                if r > BALANCE_MU * s:
                    rho *= BALANCE_TAU
                    U /= BALANCE_TAU
                elif s > BALANCE_MU * r:
                    rho /= BALANCE_TAU
                    U *= BALANCE_TAU

    blocks = sp.mats(best_Y)
    decomposition = tuple(
        (X.shape.sites[v], HermitianOp(X.shape, hermitize(blocks[v])))
        for v in range(n) if np.max(np.abs(best_Y[v])) > 0)
    witness = HermitianOp(X.shape, hermitize(sp.mats(best_K)))
    best_lo = min(best_lo, best_up)
    return W1Certificate(float(best_up), float(best_lo), decomposition, witness,
                         it, bool(best_up - best_lo <= tol))


def w1_dual(X: HermitianOp, **kw) -> W1Certificate:
    """Certified lower bound and witness; same solve as :func:`w1_primal`."""
    return w1_primal(X, **kw)


def w1_distance(rho: DensityState, sigma: DensityState, **kw) -> W1Certificate:
    if rho.shape != sigma.shape:
        raise ShapeError(f"register mismatch: {rho.shape} vs {sigma.shape}")
    cert = w1_primal(rho - sigma, **kw)
    cor1 = marginal_lower_bound(rho, sigma)
    assert cor1 <= cert.value_upper + 1e-6, "marginal bound exceeds primal value"
    return cert


def marginal_lower_bound(rho: HermitianOp, sigma: HermitianOp) -> float:
    """``1/2 sum_v ||rho_v - sigma_v||_1``, a lower bound on the W1 distance."""
    X = (rho - sigma).mat
    d, n = rho.shape.d, rho.shape.n
    return float(sum(
        0.5 * trace_norm(ptrace_array(X, d, n, [k for k in range(n) if k != v]))
        for v in range(n)))


# ----------------------------------------------------------------------------
# Lipschitz constant
# ----------------------------------------------------------------------------

def _proj_l1_ball(x, t):
    """Row-wise Euclidean projection onto ``{||y||_1 <= t}``."""
    a = np.abs(x)
    inside = a.sum(axis=1) <= t
    s = -np.sort(-a, axis=1)
    cs = np.cumsum(s, axis=1)
    k = np.arange(1, x.shape[1] + 1)
    r = np.maximum((s - (cs - t) / k > 0).sum(axis=1), 1)
    theta = (cs[np.arange(len(x)), r - 1] - t) / r
    out = np.sign(x) * np.maximum(a - theta[:, None], 0.0)
    out[inside] = x[inside]
    return out


def _spread(mats):
    w = np.linalg.eigvalsh(mats)
    return 0.5 * (w[..., -1] - w[..., 0]), 0.5 * (w[..., -1] + w[..., 0])


def lip_const(H: HermitianOp, refine: bool = True, tol: float = 1e-7,
              max_iter: int = 3000, check_every: int = 20) -> LipschitzBracket:
    """Two-sided bracket on ``||H||_L = 2 max_v min_G ||H - I_v (x) G||_inf``.

    The lower end is the larger of ``max_v ||H - I_v (x) Tr_v H / d||_inf``
    and a dual bound ``2 Tr[H Y] / ||Y||_1`` with ``Tr_v Y = 0``. The upper
    end comes from explicit ``G``: the normalized partial trace shifted by
    the optimal multiple of the identity, refined by ADMM on the
    spectral-norm problem when ``refine`` is set.
    """
    d, n = H.shape.d, H.shape.n
    sp = _Split(d, n)
    h = sp.coeffs(H.mat)
    fixed = sp.mask * h[None, :]
    free = 1.0 - sp.mask

    # P_v H for every v; the identity direction is free for every site
    Z = fixed.copy()
    pv = np.abs(np.linalg.eigvalsh(sp.mats(Z))).max(axis=-1)
    lower = float(pv.max())
    up_v, shift = _spread(sp.mats(Z))
    best_Z = Z.copy()
    best_Z[:, 0] -= shift * np.sqrt(d ** n)
    lo_v = np.zeros(n)

    if refine and lower > 0:
        U = np.zeros_like(Z)
        rho = 1.0 / max(lower, 1e-12)
        ones = np.sqrt(d ** n)
        for it in range(1, max_iter + 1):
            V = Z - U
            w, u = np.linalg.eigh(sp.mats(V))
            wm = w - _proj_l1_ball(w, 1.0 / rho)
            M = sp.coeffs((u * wm[:, None, :]) @ u.conj().transpose(0, 2, 1))
            lam = rho * (V - M)
            Z_new = fixed + free * (M + U)
            U += M - Z_new
            Z = Z_new
            if it % check_every == 0:
                spread, c = _spread(sp.mats(Z))
                better = spread < up_v
                if np.any(better):
                    cand = Z.copy()
                    cand[:, 0] -= c * ones
                    best_Z[better] = cand[better]
                    up_v = np.minimum(up_v, spread)
                for y in (sp.mask * lam, sp.mask * (rho * U)):
                    tn = np.abs(np.linalg.eigvalsh(sp.mats(y))).sum(axis=-1)
                    val = np.where(tn > 1e-300, (y @ h) / np.maximum(tn, 1e-300), 0.0)
                    lo_v = np.maximum(lo_v, val)
                if np.max(up_v - lo_v) <= tol * max(1.0, up_v.max()):
                    break
    upper = float(2 * up_v.max())
    lower = max(lower, float(2 * lo_v.max()))
    lower = min(lower, upper)
    best_M = sp.mats(best_Z)
    witnesses = tuple(HermitianOp(H.shape, hermitize(H.mat - best_M[v])) for v in range(n))
    return LipschitzBracket(lower, upper, witnesses)


# ----------------------------------------------------------------------------
# classical oracle
# ----------------------------------------------------------------------------

def _hamming_matrix(d: int, n: int) -> np.ndarray:
    idx = np.indices((d,) * n).reshape(n, -1)
    return (idx[:, :, None] != idx[:, None, :]).sum(axis=0).astype(float)


def classical_w1_oracle(p, q, d: int = 2) -> float:
    """Exact Wasserstein-1 distance on ``[d]^n`` with Hamming cost.

    Solves the transport LP with the HiGHS simplex solver.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError("distributions must have the same length")
    for v in (p, q):
        if np.any(v < -1e-12) or abs(v.sum() - 1) > 1e-9:
            raise ValueError("invalid probability vector")
    n = round(math.log(len(p), d))
    if d ** n != len(p):
        raise ValueError(f"length {len(p)} is not a power of {d}")
    if np.allclose(p, q, atol=1e-15):
        return 0.0
    N = len(p)
    C = _hamming_matrix(d, n)
    A = np.vstack([np.kron(np.eye(N), np.ones(N)), np.kron(np.ones(N), np.eye(N))])
    b = np.concatenate([p, q])
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs-ds")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


# ----------------------------------------------------------------------------
# light cones
# ----------------------------------------------------------------------------

def transfer_matrix(Phi: ChannelRep) -> np.ndarray:
    """Matrix of ``Phi`` in the local product basis, ``T[beta, alpha]``."""
    d, n = Phi.in_shape.d, Phi.in_shape.n
    K = d ** (2 * n)
    basis = from_coeffs(np.eye(K), d, n)
    imgs = (basis.reshape(K, -1) @ Phi.superop.T).reshape(K, Phi.dout, Phi.dout)
    do, no = Phi.out_shape.d, Phi.out_shape.n
    return to_coeffs(hermitize_batch(imgs), do, no).T


def hermitize_batch(m):
    return 0.5 * (m + m.conj().transpose(0, 2, 1))


def light_cones(Phi: ChannelRep, tol: float = 1e-10) -> dict:
    """Smallest site sets ``A_v`` with ``Tr_{A_v} Phi(X) = 0`` whenever ``Tr_v X = 0``.

    A coefficient survives the partial trace over ``A`` exactly when its
    support misses ``A``, so ``A_v`` is a minimum hitting set for the
    supports reached from inputs nontrivial on ``v``.
    """
    if Phi.in_shape != Phi.out_shape:
        raise ShapeError("light cones need a map on a single register")
    d, n = Phi.in_shape.d, Phi.in_shape.n
    T = transfer_matrix(Phi)
    mask = support_mask(d, n)
    cones = {}
    for v in range(n):
        cols = mask[v]
        rows = np.abs(T[:, cols]).max(axis=1) > tol
        supports = {tuple(np.nonzero(mask[:, b])[0]) for b in np.nonzero(rows)[0]}
        supports.discard(())
        found = None
        for size in range(0, n + 1):
            for A in itertools.combinations(range(n), size):
                if all(set(A) & set(s) for s in supports):
                    found = A
                    break
            if found is not None:
                break
        cones[Phi.in_shape.sites[v]] = tuple(Phi.in_shape.sites[k] for k in found)
    return cones


def light_cone_expansion_check(Phi: ChannelRep, X: HermitianOp, **kw) -> tuple[float, float]:
    """``(upper ||Phi(X)||_W1, 2 max_v |A_v| lower ||X||_W1)``."""
    if not Phi.is_cptp(1e-7):
        raise NotCPTPError("light-cone bound needs a CPTP map")
    cones = light_cones(Phi)
    amax = max(len(a) for a in cones.values())
    out = w1_primal(Phi(X), **kw)
    inp = w1_primal(X, **kw)
    return out.value_upper, 2 * amax * inp.value_lower


# ----------------------------------------------------------------------------
# differential structures
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiffOp:
    L: np.ndarray = field(repr=False)
    omega: float
    site: object = None
    support: tuple | None = None


@dataclass(frozen=True, eq=False)
class DifferentialStructure:
    """Jump operators ``L_k`` with ``omega L_k omega^-1 = exp(-omega_k) L_k``."""

    lindblad_ops: tuple
    base_state: DensityState = field(repr=False)

    def __post_init__(self):
        ops = tuple(self.lindblad_ops)
        object.__setattr__(self, "lindblad_ops", ops)
        rho = self.base_state.mat
        w, u = np.linalg.eigh(rho)
        if w[0] <= 0:
            raise ValueError("differential structure needs a full-rank state")
        rinv = (u / w) @ u.conj().T
        mats = [o.L for o in ops]
        for o in ops:
            if np.max(np.abs(rho @ o.L @ rinv - np.exp(-o.omega) * o.L)) > 1e-8:
                raise ValueError("operator is not a modular eigenvector with the given omega")
            if not any(np.max(np.abs(o.L.conj().T - m)) < 1e-12 for m in mats):
                raise ValueError("jump operators are not closed under adjoint")


def diff_lipschitz(X: HermitianOp, D: DifferentialStructure) -> float:
    tot = 0.0
    for o in D.lindblad_ops:
        c = o.L @ X.mat - X.mat @ o.L
        tot += (np.exp(-o.omega / 2) + np.exp(o.omega / 2)) * np.linalg.norm(c, 2) ** 2
    return float(np.sqrt(tot))


def comparison_check(H: HermitianOp, D: DifferentialStructure) -> tuple[float, float]:
    """Differential Lipschitz norm against the explicit comparison constant.

    rhs = (d^2-1)/d^2 sqrt(n |Gamma|) 2 sqrt(2 e^(Omega/2))
          max_k ||L_k|| |N_k| ||H||_L
    """
    if any(o.site is None or o.support is None for o in D.lindblad_ops):
        raise ValueError("comparison bound needs site and support tags on every operator")
    d, n = H.shape.d, H.shape.n
    counts: dict = {}
    for o in D.lindblad_ops:
        counts[o.site] = counts.get(o.site, 0) + 1
    gamma = max(counts.values())
    Omega = max(abs(o.omega) for o in D.lindblad_ops)
    lmax = max(np.linalg.norm(o.L, 2) * len(o.support) for o in D.lindblad_ops)
    lip = lip_const(H).upper
    rhs = (d * d - 1) / (d * d) * np.sqrt(n * gamma) * 2 * np.sqrt(2 * np.exp(Omega / 2)) * lmax * lip
    return diff_lipschitz(H, D), float(rhs)


def classical_structure(omega) -> DifferentialStructure:
    """Local structure ``|x'><x|_i (x) Pi_c`` for a diagonal commuting Gibbs state.

    ``Pi_c`` projects the rest of ``N_i`` onto configuration ``c``; the
    modular exponent is ``beta`` times the local energy change.
    """
    H = omega.hamiltonian
    Hm = H.matrix()
    if np.max(np.abs(Hm - np.diag(np.diag(Hm)))) > 1e-12:
        raise ValueError("classical structure needs a diagonal Hamiltonian")
    shape, d, n = H.shape, H.shape.d, H.shape.n
    E = np.real(np.diag(Hm))
    ops = []
    for i in shape.sites:
        nb = H.neighborhood(i)
        others = [s for s in nb if s != i]
        pi = shape.index(i)
        po = shape.positions(others)
        for x, y in itertools.permutations(range(d), 2):
            for conf in itertools.product(range(d), repeat=len(others)):
                loc = np.zeros((d, d))
                loc[y, x] = 1.0
                proj = np.zeros((d ** len(others),) * 2)
                k = int(np.ravel_multi_index(conf, (d,) * len(others))) if others else 0
                proj[k, k] = 1.0
                L = embed_array(np.kron(loc, proj), d, n, [pi] + po)
                # energy change is the same on every basis state the operator moves
                src = np.nonzero(np.abs(L).sum(axis=0))[0][0]
                dst = np.nonzero(np.abs(L[:, src]))[0][0]
                ops.append(DiffOp(L, float(omega.beta * (E[dst] - E[src])), i, nb))
    return DifferentialStructure(tuple(ops), omega.state)
