"""Diamond norms, the contraction of the averaged resampling map, and the
high-temperature curvature bound.

The diamond norm is bracketed from both sides.  The lower bound maximizes
``||(Phi (x) id)(uu*)||_1`` over pure inputs by alternating between the
sign of the output and the top eigenvector of the adjoint, which never
decreases the objective.  The upper bound is the dual SDP

    min lambda_max(Tr_out Z)   s.t.  Z >= J,  Z >= -J,

evaluated at ``Z = |J|`` and at an SCS solution repaired to exact
feasibility, so every reported upper bound is a feasible point.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channels import ChannelRep, ptrace_out
from .linalg import (
    HermitianOp,
    RegisterShape,
    embed_array,
    hermitize,
    partial_trace,
    permute_sites,
    trace_norm,
)
from .recovery import embed_superop, psi_avg, psi_local, psi_v, ptrace_superop
from .states import GibbsState, NotCommutingError, haar_vector
from .w1 import marginal_lower_bound, w1_primal

try:  # the SDP refinement is optional; |J| is always a feasible point
    import cvxpy as cp
except ImportError:  # pragma: no cover
    cp = None


@dataclass(frozen=True)
class DiamondBracket:
    """Certified bracket on ``||Phi||_diamond``; unpacks as ``(lower, upper)``."""

    lower: float
    upper: float
    loose: bool = False
    method: str = ""

    def __iter__(self):
        return iter((self.lower, self.upper))


def _pure_objective_matrix(J, di, do, da, W):
    """Quadratic form ``A`` with ``<u|A|u> = Tr[W (Phi (x) id)(uu*)]``."""
    Jt = J.reshape(di, do, di, do)
    Wt = W.reshape(do, da, do, da)
    A = np.einsum("iakb,blaj->klij", Jt, Wt)
    return hermitize(A.reshape(di * da, di * da))


def _pure_output(J, di, do, da, u):
    M = u.reshape(di, da)
    Jt = J.reshape(di, do, di, do)
    out = np.einsum("ij,kl,iakb->ajbl", M, M.conj(), Jt)
    return hermitize(out.reshape(do * da, do * da))


def _sign(x):
    w, v = np.linalg.eigh(x)
    s = np.where(w >= 0, 1.0, -1.0)
    return (v * s) @ v.conj().T


def pure_input_lower(J: np.ndarray, di: int, do: int, da: int | None = None,
                     rng: np.random.Generator | None = None, restarts: int = 6,
                     max_iter: int = 200) -> tuple[float, np.ndarray]:
    """Largest ``||(Phi (x) id_a)(uu*)||_1`` found by alternating ascent.

    ``J`` is the Choi matrix of ``Phi``.  With ``da = di`` this is a lower
    bound on the diamond norm; with ``da = 1`` it maximizes over pure
    inputs on the bare input register.
    """
    da = di if da is None else da
    rng = np.random.default_rng(0) if rng is None else rng
    starts = []
    if da == di:
        starts.append(np.eye(di).reshape(-1) / math.sqrt(di))
    starts += [haar_vector(di * da, rng) for _ in range(restarts)]
    best, best_u = -1.0, starts[0]
    for u in starts:
        val = trace_norm(_pure_output(J, di, do, da, u))
        for _ in range(max_iter):
            W = _sign(_pure_output(J, di, do, da, u))
            A = _pure_objective_matrix(J, di, do, da, W)
            u = np.linalg.eigh(A)[1][:, -1]
            new = trace_norm(_pure_output(J, di, do, da, u))
            if new <= val * (1 + 1e-12) + 1e-15:
                val = max(val, new)
                break
            val = new
        if val > best:
            best, best_u = val, u
    return float(best), best_u


def _upper_at(Z, J, di, do):
    """``lambda_max(Tr_out Z)`` after shifting ``Z`` until ``Z +- J >= 0``."""
    Z = hermitize(Z)
    a = max(0.0, -np.linalg.eigvalsh(Z - J)[0], -np.linalg.eigvalsh(Z + J)[0])
    Z = Z + a * np.eye(Z.shape[0])
    return float(np.linalg.eigvalsh(hermitize(ptrace_out(Z, di, do)))[-1])


def _sdp_upper(J, di, do) -> float | None:
    if cp is None:
        return None
    scale = float(np.max(np.abs(J)))
    if scale == 0.0:
        return 0.0
    Jn = J / scale
    D = di * do
    Z = cp.Variable((D, D), hermitian=True)
    t = cp.Variable()
    cons = [Z - Jn >> 0, Z + Jn >> 0,
            t * np.eye(di) - cp.partial_trace(Z, [di, do], axis=1) >> 0]
    prob = cp.Problem(cp.Minimize(t), cons)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            prob.solve(solver="SCS", eps=1e-6, max_iters=20000)
    except Exception:  # solver failure falls back to the |J| bound
        return None
    if Z.value is None:
        return None
    return scale * _upper_at(Z.value, Jn, di, do)


def diamond_norm(Phi: ChannelRep, sdp: bool = True, seed: int = 0,
                 restarts: int = 6) -> DiamondBracket:
    """Bracket ``||Phi||_diamond`` for a Hermiticity-preserving map.

    Returns ``DiamondBracket(lower, upper, loose, method)``.  ``loose`` is
    set when the SDP refinement was requested but unavailable, in which
    case ``upper`` comes from ``Z = |J|`` alone.
    """
    di, do = Phi.din, Phi.dout
    J = hermitize(Phi.choi())
    if not np.any(J):
        return DiamondBracket(0.0, 0.0, False, "zero")
    lower, _ = pure_input_lower(J, di, do, di, np.random.default_rng(seed), restarts)
    w, v = np.linalg.eigh(J)
    absJ = (v * np.abs(w)) @ v.conj().T
    upper = float(np.linalg.eigvalsh(hermitize(ptrace_out(absJ, di, do)))[-1])
    method, loose = "abs", False
    if sdp and upper > lower * (1 + 1e-9):
        u2 = _sdp_upper(J, di, do)
        if u2 is None:
            loose = True
        elif u2 < upper:
            upper, method = u2, "sdp"
    upper = max(upper, lower)
    return DiamondBracket(float(lower), float(upper), loose, method)


# ----------------------------------------------------------------------------
# contraction of Psi
# ----------------------------------------------------------------------------

def _insert_superop(state: np.ndarray, site, shape: RegisterShape) -> np.ndarray:
    """Superoperator of ``X -> state_site (x) X`` from ``shape`` minus ``site`` to ``shape``."""
    d, n = shape.d, shape.n
    pos = shape.index(site)
    left = embed_array(state, d, n, [pos])
    rest = shape.sub(shape.complement([site]))
    E = embed_superop(rest, shape)
    return np.kron(left, np.eye(shape.dim)) @ E


def local_resampling_defect(omega: GibbsState, w, tol: float = 1e-8) -> ChannelRep:
    """``Psi_w - omega_w (x) Tr_w`` restricted to ``N_w``.

    Both terms act as the identity off ``N_w`` for a commuting Hamiltonian,
    so the diamond norm of the difference can be computed on ``N_w``.
    """
    loc = psi_local(omega, w, tol)
    shape = loc.in_shape
    ow = omega.marginal([w]).mat
    if shape.n == 1:
        rep = np.outer(ow.reshape(-1), np.eye(shape.dim).reshape(-1))
    else:
        rep = _insert_superop(ow, w, shape) @ ptrace_superop(shape, [w])
    return ChannelRep(shape, shape, loc.superop - rep)


@dataclass
class ContractionEstimate:
    """Bracket on ``sup ||Psi(X)||_W1 / ||X||_W1`` over traceless ``X``."""

    upper: float
    lower: float
    per_site_diamond: dict = field(default_factory=dict)
    diamond_lower: dict = field(default_factory=dict)
    n: int = 0
    N: int = 0
    loose: bool = False

    @property
    def kappa(self) -> float:
        """``n (1 - upper)``: positive when the upper bound is a strict contraction."""
        return self.n * (1.0 - self.upper)


def _require_commuting(omega):
    if not isinstance(omega, GibbsState):
        raise TypeError("contraction estimates need a GibbsState")
    if not omega.commuting:
        raise NotCommutingError("the curvature bound is only proven for commuting Hamiltonians")


def contraction_upper(omega: GibbsState, tol: float = 1e-8, sdp: bool = True):
    """``max_v [1 - 1/n + (2N-1)/n sum_{w in N_v minus v} ||Psi_w - omega_w Tr_w||_diamond]``."""
    _require_commuting(omega)
    H = omega.hamiltonian
    sites = H.shape.sites
    n, N = H.shape.n, H.max_neighborhood()
    dia = {}
    loose = False
    for w in sites:
        if n == 1:
            dia[w] = DiamondBracket(0.0, 0.0)
            continue
        dia[w] = diamond_norm(local_resampling_defect(omega, w, tol), sdp=sdp)
        loose |= dia[w].loose
    best = 0.0
    for v in sites:
        s = sum(dia[w].upper for w in H.neighborhood(v) if w != v)
        best = max(best, 1 - 1 / n + (2 * N - 1) / n * s)
    return best, dia, loose


def _difference_on_site(v, shape: RegisterShape, psi1, psi2, tau_rest):
    """``(psi1 - psi2)_v (x) tau`` on the full register, ``tau`` on the other sites."""
    loc = np.outer(psi1, psi1.conj()) - np.outer(psi2, psi2.conj())
    n, d = shape.n, shape.d
    pos = shape.index(v)
    if n == 1:
        return loc
    full = np.kron(loc, tau_rest)
    # full is ordered (v, rest); move v back into place
    order = [pos] + [k for k in range(n) if k != pos]
    return permute_sites(full, d, list(np.argsort(order)))


def _orth_pair(d, rng):
    q, _ = np.linalg.qr(rng.normal(size=(d, 2)) + 1j * rng.normal(size=(d, 2)))
    return q[:, 0], q[:, 1]


def contraction_lower(omega: GibbsState, Psi: ChannelRep | None = None, tol: float = 1e-8,
                      seed: int = 0, restarts: int = 8, sweeps: int = 30) -> float:
    """Certified lower bound on the W1 contraction of ``Psi`` by random search.

    Candidates ``X = (psi1 - psi2)_v (x) tau`` have ``||X||_W1 = 1``.  The
    search scores them with the marginal lower bound and the best one is
    certified with the primal-dual solver.
    """
    st = omega.state if isinstance(omega, GibbsState) else omega
    shape = st.shape
    d, n = shape.d, shape.n
    Psi = psi_avg(omega, tol) if Psi is None else Psi
    rng = np.random.default_rng(seed)
    zero = np.zeros_like(st.mat)

    def score(X):
        Y = Psi.apply_array(X)
        return marginal_lower_bound(HermitianOp(shape, hermitize(Y)), HermitianOp(shape, zero)), Y

    best, best_Y = 0.0, None
    for v in shape.sites:
        for _ in range(restarts):
            p1, p2 = _orth_pair(d, rng)
            tau = _random_rest(d, n - 1, rng)
            val, Y = score(_difference_on_site(v, shape, p1, p2, tau))
            step = 0.5
            for _ in range(sweeps):
                G = _small_unitary(d, step, rng)
                q1, q2 = G @ p1, G @ p2
                t2 = tau if n == 1 else _perturb_state(tau, step, rng)
                new, Y2 = score(_difference_on_site(v, shape, q1, q2, t2))
                if new > val:
                    val, Y, p1, p2, tau = new, Y2, q1, q2, t2
                else:
                    step *= 0.8
            if val > best:
                best, best_Y = val, Y
    if best_Y is None:
        return 0.0
    cert = w1_primal(HermitianOp(shape, hermitize(best_Y)), tol=1e-7)
    return float(max(best, cert.value_lower))


def _random_rest(d, m, rng):
    if m == 0:
        return np.ones((1, 1))
    D = d ** m
    g = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    r = g @ g.conj().T
    return r / np.trace(r).real


def _small_unitary(d, step, rng):
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = (g + g.conj().T) / 2
    w, v = np.linalg.eigh(h)
    return (v * np.exp(1j * step * w)) @ v.conj().T


def _perturb_state(tau, step, rng):
    D = tau.shape[0]
    g = rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))
    r = (1 - step) * tau + step * (g @ g.conj().T) / np.trace(g @ g.conj().T).real
    return hermitize(r)


def contraction_coefficient(omega: GibbsState, tol: float = 1e-8, seed: int = 0,
                            restarts: int = 8, sweeps: int = 30, sdp: bool = True) -> ContractionEstimate:
    """Bracket the W1 contraction coefficient of ``Psi = (1/n) sum_v Psi_v``.

    Parameters
    ----------
    omega : GibbsState
        Gibbs state of a commuting hypergraph Hamiltonian.
    tol : float
        Quadrature tolerance for the recovery maps.
    seed, restarts, sweeps : int
        Budget of the random search for the lower bound.
    sdp : bool
        Refine diamond-norm upper bounds with an SDP solve.
    """
    up, dia, loose = contraction_upper(omega, tol, sdp)
    H = omega.hamiltonian
    lo = contraction_lower(omega, None, tol, seed, restarts, sweeps)
    return ContractionEstimate(
        upper=float(up), lower=float(lo),
        per_site_diamond={w: b.upper for w, b in dia.items()},
        diamond_lower={w: b.lower for w, b in dia.items()},
        n=H.shape.n, N=H.max_neighborhood(), loose=loose)


def contraction_trace(omega: GibbsState, X: HermitianOp, v, tol: float = 1e-8) -> dict:
    """Intermediate quantities of the contraction argument for one ``X``.

    ``X`` must satisfy ``Tr_v X = 0`` and ``||X||_1 <= 2``.  Each entry is a
    pair ``(lhs, rhs)`` of an inequality used to bound ``||Psi(X)||_W1``.
    """
    _require_commuting(omega)
    H = omega.hamiltonian
    shape = H.shape
    n, N = shape.n, H.max_neighborhood()
    if trace_norm(partial_trace(X, [v]).mat) > 1e-9 * max(1.0, trace_norm(X.mat)):
        raise ValueError("X must have vanishing partial trace on v")
    maps = {w: psi_v(omega, w, tol) for w in shape.sites}
    Y = sum(maps[w].apply_array(X.mat) for w in shape.sites) / n
    Yop = HermitianOp(shape, hermitize(Y))
    w1_full = w1_primal(Yop, tol=1e-8).value_upper
    nbrs = [w for w in H.neighborhood(v) if w != v]
    out = {}
    if n == 1:
        out["final"] = (w1_full, 0.0)
        return out
    TvY = partial_trace(Yop, [v])
    w1_rest = w1_primal(TvY, tol=1e-8).value_upper
    per = {w: trace_norm(partial_trace(HermitianOp(shape, hermitize(maps[w].apply_array(X.mat))), [v]).mat)
           for w in nbrs}
    s = sum(per.values())
    half_Y = 0.5 * trace_norm(Y)
    half_TvY = 0.5 * trace_norm(TvY.mat)
    out["split"] = (w1_full, half_Y + half_TvY + w1_rest)
    out["trace_norm"] = (half_Y, sum(trace_norm(maps[w].apply_array(X.mat)) for w in shape.sites if w != v) / (2 * n))
    out["trace_norm_total"] = (half_Y, 1 - 1 / n)
    out["w1_rest"] = (w1_rest, (N - 1) / n * s)
    out["trace_rest"] = (trace_norm(TvY.mat), s / n)
    out["final"] = (w1_full, 1 - 1 / n + (N - 0.5) / n * s)
    return out


# ----------------------------------------------------------------------------
# critical temperature and the curvature bound
# ----------------------------------------------------------------------------

def lambert_w(x: float, tol: float = 1e-14) -> float:
    """Principal branch of Lambert W for ``x >= 0`` by Newton iteration."""
    if x < 0 or not math.isfinite(x):
        raise ValueError("lambert_w is only implemented for finite x >= 0")
    if x == 0:
        return 0.0
    w = math.log1p(x) if x < 3 else math.log(x) - math.log(math.log(x))
    for _ in range(100):
        ew = math.exp(w)
        f = w * ew - x
        if abs(f) <= tol * max(1.0, x):
            break
        w -= f / (ew * (w + 1))
    return w


@dataclass(frozen=True)
class BetaCritical:
    beta_c: float
    N: int
    d: int
    max_norm: float


def beta_critical(N: int, d: int, max_norm: float) -> BetaCritical:
    """Inverse temperature below which the contraction upper bound is below 1.

    ``beta_c = W(1 / (16 d^3)) / (5 N max_A ||h_A||)``.
    """
    if N < 2:
        raise ValueError("beta_c is defined for N >= 2")
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    return BetaCritical(lambert_w(1 / (16 * d ** 3)) / (5 * N * max_norm), N, d, max_norm)


def tci_curvature_bound(n: int, N: int, kappa: float) -> float:
    """TCI constant ``2 n N^2 / (1 - exp(-kappa))^2`` from a contraction rate ``kappa > 0``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return 2 * n * N ** 2 / (-math.expm1(-kappa)) ** 2

