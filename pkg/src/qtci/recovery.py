"""Rotated Petz recovery maps and the channels built from them.

For a state ``omega`` on ``AB`` the recovery map is

    Phi(rho_A) = int omega_AB^((1-it)/2) (omega_A^((it-1)/2) rho_A
                 omega_A^(-(1+it)/2) (x) I_B) omega_AB^((1+it)/2) dmu0(t).

In the eigenbases of ``omega_AB`` and ``omega_A`` every superoperator
entry picks up a phase ``exp(-i t x / 2)`` with ``x`` a difference of log
eigenvalue gaps, so the quadrature is applied entrywise to that phase.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import ChannelRep, replacer_channel
from .linalg import (
    DensityState,
    QuadratureRule,
    RegisterShape,
    ShapeError,
    _pd_eig,
    embed_array,
    marginal,
    mu0_quadrature,
    permute_sites,
    ptrace_array,
    trace_norm,
)
from .states import (
    GibbsState,
    HypergraphHamiltonian,
    cond_mutual_info,
    gibbs,
    rel_entropy,
)


class MarkovConditionError(ValueError):
    """The conditional mutual information needed for locality is not zero."""


@dataclass(frozen=True, eq=False)
class RecoveryMap(ChannelRep):
    """``Phi_{A -> AB}`` for a base state ``omega``."""

    base: DensityState = field(default=None, repr=False)
    kept: tuple = ()
    recovered: tuple = ()
    quadrature: QuadratureRule | None = field(default=None, repr=False)
    clipped: bool = False


# ----------------------------------------------------------------------------
# superoperator helpers
# ----------------------------------------------------------------------------

def embed_superop(small: RegisterShape, big: RegisterShape) -> np.ndarray:
    """Superoperator of ``X -> X (x) I`` from ``small`` into ``big``."""
    pos = big.positions(small.sites)
    ds = small.dim
    cols = []
    for k in range(ds * ds):
        e = np.zeros(ds * ds, dtype=complex)
        e[k] = 1.0
        cols.append(embed_array(e.reshape(ds, ds), big.d, big.n, pos).reshape(-1))
    return np.array(cols).T


def ptrace_superop(big: RegisterShape, traced: Sequence) -> np.ndarray:
    """Superoperator of the partial trace over ``traced``."""
    pos = big.positions(traced)
    D = big.dim
    rest = D // big.d ** len(pos)
    cols = []
    for k in range(D * D):
        e = np.zeros(D * D, dtype=complex)
        e[k] = 1.0
        cols.append(ptrace_array(e.reshape(D, D), big.d, big.n, pos).reshape(-1))
    return np.array(cols).T.reshape(rest * rest, D * D)


def mu0_characteristic(x):
    """``int exp(-i t x) dmu0(t) = x / sinh(x)``."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(x) > 1e-8
    out[nz] = x[nz] / np.sinh(x[nz])
    small = ~nz
    out[small] = 1 - x[small] ** 2 / 6
    return out


def _petz_superop(omega_ab: np.ndarray, omega_a: np.ndarray, E: np.ndarray,
                  quad: QuadratureRule | None, clip: bool):
    lam, U, c1 = _pd_eig(omega_ab, clip)
    mu, V, c2 = _pd_eig(omega_a, clip)
    UU = np.kron(U, U.conj())
    VV = np.kron(V, V.conj())
    Et = UU.conj().T @ E @ VV
    ll = np.log(lam)
    lm = np.log(mu)
    gap_out = (ll[:, None] - ll[None, :]).reshape(-1)
    gap_in = (lm[:, None] - lm[None, :]).reshape(-1)
    amp_out = np.sqrt(np.outer(lam, lam)).reshape(-1)
    amp_in = 1 / np.sqrt(np.outer(mu, mu)).reshape(-1)
    x = 0.5 * (gap_out[:, None] - gap_in[None, :])
    if quad is None:
        kern = mu0_characteristic(x).astype(complex)
    else:
        kern = np.zeros(x.shape, dtype=complex)
        for t, w in zip(quad.nodes, quad.weights):
            kern += w * np.exp(-1j * t * x)
    mid = Et * amp_out[:, None] * amp_in[None, :] * kern
    return UU @ mid @ VV.conj().T, c1 or c2


# ----------------------------------------------------------------------------
# recovery maps
# ----------------------------------------------------------------------------

def petz_rotated(omega: DensityState, A: Sequence, B: Sequence, tol: float = 1e-8,
                 exact: bool = False, clip: bool = True) -> RecoveryMap:
    """Rotated Petz recovery map ``Phi_{A -> AB}`` of ``omega``.

    Parameters
    ----------
    omega : DensityState
        Base state; sites outside ``A u B`` are traced out.
    A, B : site lists
        Kept and recovered sites, disjoint; ``A`` must be nonempty.
    tol : float
        Quadrature tolerance for ``mu0``.
    exact : bool
        Use the closed-form Fourier transform of ``mu0`` instead of
        quadrature (used as an oracle in tests).
    clip : bool
        Floor tiny eigenvalues instead of raising; the flag is recorded.
    """
    A, B = list(A), list(B)
    if not A:
        raise ShapeError("kept register must be nonempty")
    if set(A) & set(B):
        raise ShapeError("A and B must be disjoint")
    out_shape = omega.shape.sub(A + B)
    in_shape = omega.shape.sub(A)
    w_ab = marginal(omega, A + B).mat if out_shape != omega.shape else omega.mat
    w_a = marginal(omega, A).mat
    E = embed_superop(in_shape, out_shape)
    quad = None if exact else mu0_quadrature(tol)
    S, clipped = _petz_superop(w_ab, w_a, E, quad, clip)
    base = omega if isinstance(omega, DensityState) else DensityState.from_matrix(omega.shape, omega.mat)
    return RecoveryMap(in_shape, out_shape, S, base=base, kept=tuple(in_shape.sites),
                       recovered=tuple(s for s in out_shape.sites if s not in A),
                       quadrature=quad, clipped=clipped)


def _state(omega) -> DensityState:
    return omega.state if isinstance(omega, GibbsState) else omega


def psi_v(omega, v, tol: float = 1e-8, exact: bool = False) -> ChannelRep:
    """``Psi_v = Phi_{v^c -> V} o Tr_v``: resample site ``v`` from ``omega``."""
    st = _state(omega)
    shape = st.shape
    rest = list(shape.complement([v]))
    if not rest:
        return replacer_channel(shape, st)
    phi = petz_rotated(st, rest, [v], tol=tol, exact=exact)
    # output of phi is ordered like the register already
    tr = ptrace_superop(shape, [v])
    return ChannelRep(shape, shape, phi.superop @ tr)


def psi_avg(omega, tol: float = 1e-8, exact: bool = False) -> ChannelRep:
    """``Psi = (1/n) sum_v Psi_v``."""
    st = _state(omega)
    maps = [psi_v(omega, v, tol, exact) for v in st.shape.sites]
    return ChannelRep(st.shape, st.shape, sum(m.superop for m in maps) / len(maps))


def local_gibbs(omega: GibbsState, v) -> GibbsState:
    """Gibbs state of ``H_v = sum_{A ni v} h_A`` on the register ``N_v``."""
    H = omega.hamiltonian
    nb = H.neighborhood(v)
    shape = H.shape.sub(nb)
    terms = tuple((s, h) for s, h in H.terms if v in s)
    return gibbs(HypergraphHamiltonian(shape, terms), omega.beta)


def psi_local(omega: GibbsState, v, tol: float = 1e-8, exact: bool = False) -> ChannelRep:
    """``Psi_v`` restricted to ``N_v`` for a commuting Hamiltonian.

    For commuting terms ``omega^z omega_{v^c}^-z`` only involves ``H_v``,
    so ``Psi_v`` is this map tensored with the identity off ``N_v``.
    """
    if not omega.commuting:
        raise ValueError("local reduction of Psi_v needs a commuting Hamiltonian")
    return psi_v(local_gibbs(omega, v), v, tol, exact)


def extend_channel(local: ChannelRep, shape: RegisterShape) -> ChannelRep:
    """``local (x) id`` on ``shape``; ``local`` must act on a sub-register."""
    if local.in_shape != local.out_shape:
        raise ShapeError("extension needs a map on a single register")
    sub = local.in_shape
    d, n = shape.d, shape.n
    pos = shape.positions(sub.sites)
    rest = [k for k in range(n) if k not in pos]
    dl, dr = sub.dim, d ** len(rest)
    S = local.superop.reshape(dl, dl, dl, dl)
    eye = np.eye(dr)
    # full superop in the (sub, rest) factor order
    F = np.einsum("abce,rp,sq->arbscpeq", S, eye, eye).reshape(dl * dr * dl * dr, -1)
    order = pos + rest
    inv = list(np.argsort(order))
    P = _perm_superop(d, n, inv)
    return ChannelRep(shape, shape, P @ F @ P.T)


def _perm_superop(d, n, perm):
    """Superoperator of ``X -> permute_sites(X, perm)``."""
    D = d ** n
    idx = np.arange(D).reshape((d,) * n).transpose(perm).reshape(-1)
    # permute_sites maps new index k to old index idx[k]
    P = np.zeros((D * D, D * D))
    rows = (np.arange(D)[:, None] * D + np.arange(D)[None, :]).reshape(-1)
    cols = (idx[:, None] * D + idx[None, :]).reshape(-1)
    P[rows, cols] = 1.0
    return P


# ----------------------------------------------------------------------------
# entropy inequalities
# ----------------------------------------------------------------------------

def recoverability_gap(rho: DensityState, omega: DensityState, A: Sequence, B: Sequence,
                       tol: float = 1e-8) -> tuple[float, float]:
    """``(S(rho_AB||omega_AB) - S(rho_A||omega_A), 1/2 ||rho_AB - Phi(rho_A)||_1^2)``."""
    A, B = list(A), list(B)
    omega = _state(omega)
    phi = petz_rotated(omega, A, B, tol)
    r_ab = marginal(rho, A + B) if len(A + B) < rho.shape.n else rho
    w_ab = marginal(omega, A + B) if len(A + B) < omega.shape.n else omega
    r_a = marginal(rho, A)
    w_a = marginal(omega, A)
    drop = rel_entropy(r_ab, w_ab) - rel_entropy(r_a, w_a)
    rhs = 0.5 * trace_norm(r_ab.mat - phi.apply_array(r_a.mat)) ** 2
    return float(drop), float(rhs)


@dataclass(frozen=True)
class ChainBounds:
    S: float
    sum_dists: float
    bound1: float
    bound2: float
    m: int

    @property
    def pinsker_ok(self) -> bool:
        return self.S >= self.bound1 - 1e-7

    @property
    def improved_ok(self) -> bool:
        return self.bound2 <= 1 - np.exp(-self.S / self.m) + 1e-7


def chain_recovery_bounds(rho: DensityState, omega, partition: Sequence[Sequence],
                          tol: float = 1e-8) -> ChainBounds:
    """Chain-rule recoverability bounds over an ordered partition.

    ``sum_dists = sum_i ||rho_{A_1^i} - Phi_{A_1^(i-1) -> A_1^i}(rho_{A_1^(i-1)})||_1``,
    with the first term ``||rho_{A_1} - omega_{A_1}||_1``.
    """
    omega = _state(omega)
    blocks = [list(b) for b in partition]
    flat = [s for b in blocks for s in b]
    if len(set(flat)) != len(flat) or set(flat) != set(rho.shape.sites):
        raise ShapeError("partition must cover the register disjointly")
    m = len(blocks)
    total = 0.0
    prefix: list = []
    for blk in blocks:
        cur = prefix + blk
        r_cur = marginal(rho, cur)
        if not prefix:
            total += trace_norm(r_cur.mat - marginal(omega, cur).mat)
        else:
            phi = petz_rotated(omega, prefix, blk, tol)
            rec = phi.apply_array(marginal(rho, prefix).mat)
            total += trace_norm(r_cur.mat - rec)
        prefix = cur
    S = rel_entropy(rho, omega)
    return ChainBounds(float(S), float(total), total ** 2 / (2 * m), (total / (2 * m)) ** 2, m)


def markov_locality_check(omega, partition: Sequence[Sequence], i: int,
                          tol: float = 1e-8, cmi_tol: float = 1e-9) -> bool:
    """Check that ``Phi_i`` (recovering ``A_i`` from ``A_1^(i-1)``) ignores ``A_1^(i-2)``.

    ``i`` is 1-based and at least 3. The full recovery map is compared
    with ``id_{A_1^(i-2)} (x) Phi_{A_(i-1) -> A_(i-1) A_i}`` on the whole
    operator space through their superoperators.
    """
    omega = _state(omega)
    blocks = [list(b) for b in partition]
    if not 3 <= i <= len(blocks):
        raise ValueError("locality check needs 3 <= i <= m")
    far = [s for b in blocks[:i - 2] for s in b]
    mid, new = blocks[i - 2], blocks[i - 1]
    cmi = cond_mutual_info(omega, far, mid, new)
    if cmi > cmi_tol:
        raise MarkovConditionError(f"I(A_i : A_1^(i-2) | A_(i-1)) = {cmi:.3e} is not zero")
    full = petz_rotated(omega, far + mid, new, tol)
    loc = petz_rotated(omega, mid, new, tol)
    # id on `far` tensored with the local map, expressed on the full registers
    in_shape, out_shape = full.in_shape, full.out_shape
    Din = in_shape.dim
    dev = 0.0
    rng = np.random.default_rng(0)
    for _ in range(4):
        g = rng.normal(size=(Din, Din)) + 1j * rng.normal(size=(Din, Din))
        X = g + g.conj().T
        got = full.apply_array(X)
        want = _apply_local(loc, X, in_shape, out_shape, far, mid)
        dev = max(dev, float(np.max(np.abs(got - want))))
    return dev <= 10 * tol * max(1.0, float(np.max(np.abs(X))))


def _apply_local(loc: ChannelRep, X, in_shape, out_shape, far, mid):
    """Apply ``id_far (x) loc`` where ``loc`` maps ``mid`` to ``loc.out_shape``."""
    d = in_shape.d
    # reorder input as (far, mid)
    pin = in_shape.positions(far + mid)
    Xp = permute_sites(X, d, pin)
    df, dm = d ** len(far), d ** len(mid)
    T = Xp.reshape(df, dm, df, dm)
    do = loc.dout
    S = loc.superop.reshape(do, do, dm, dm)
    Y = np.einsum("abce,fcge->fagb", S, T).reshape(df * do, df * do)
    # Y is ordered (far, loc.out_shape); map to out_shape order
    lab = list(far) + list(loc.out_shape.sites)
    perm = [lab.index(s) for s in out_shape.sites]
    return permute_sites(Y, d, perm)


def eta_tilde_map(omega, partition: Sequence[Sequence], i: int, tol: float = 1e-8) -> ChannelRep:
    """``Tr_{A_(i-1)} o Phi_{A_(i-1) -> A_(i-1) A_i}`` for the two-block marginal."""
    omega = _state(omega)
    blocks = [list(b) for b in partition]
    mid, new = blocks[i - 2], blocks[i - 1]
    phi = petz_rotated(omega, mid, new, tol)
    tr = ptrace_superop(phi.out_shape, mid)
    return ChannelRep(phi.in_shape, omega.shape.sub(new), tr @ phi.superop)
