"""Hypergraph Hamiltonians, Gibbs states and entropic quantities."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .linalg import (
    DensityState,
    HermitianOp,
    RegisterShape,
    ShapeError,
    embed,
    embed_array,
    hermitize,
    marginal,
    op_norm,
)

COMMUTE_TOL = 1e-10
EIG_FLOOR = 1e-14

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class NotCommutingError(ValueError):
    pass


class EnergyMismatch(ValueError):
    pass


# ----------------------------------------------------------------------------
# Hamiltonians
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HypergraphHamiltonian:
    """Local Hamiltonian ``H = sum_A h_A`` on a register.

    ``terms`` maps each hyperedge (tuple of site labels) to a Hermitian
    operator on those sites, factors ordered as in the tuple.
    """

    shape: RegisterShape
    terms: tuple = field(default=())

    def __post_init__(self):
        terms = []
        for sites, h in self.terms:
            sites = tuple(sites)
            if not isinstance(h, HermitianOp):
                h = HermitianOp(RegisterShape(tuple(range(len(sites))), self.shape.d), h)
            if h.shape.n != len(sites) or h.shape.d != self.shape.d:
                raise ShapeError(f"term on {sites} has the wrong size")
            self.shape.positions(sites)
            terms.append((sites, h))
        object.__setattr__(self, "terms", tuple(terms))

    @property
    def edges(self) -> list[tuple]:
        return [s for s, _ in self.terms]

    def term_ops(self) -> list[HermitianOp]:
        """Each term embedded in the full register."""
        return [embed(h, s, self.shape) for s, h in self.terms]

    def matrix(self) -> np.ndarray:
        D = self.shape.dim
        out = np.zeros((D, D), dtype=complex)
        for sites, h in self.terms:
            out += embed_array(h.mat, self.shape.d, self.shape.n, self.shape.positions(sites))
        return out

    def op(self) -> HermitianOp:
        return HermitianOp(self.shape, self.matrix())

    def max_term_norm(self) -> float:
        return max((op_norm(h) for _, h in self.terms), default=0.0)

    def neighborhood(self, v) -> tuple:
        """``N_v``: ``v`` together with every site sharing a hyperedge with it."""
        self.shape.index(v)
        nb = {v}
        for sites in self.edges:
            if v in sites:
                nb.update(sites)
        return tuple(s for s in self.shape.sites if s in nb)

    def max_neighborhood(self) -> int:
        return max(len(self.neighborhood(v)) for v in self.shape.sites)

    def local_part(self, sites: Iterable) -> "HypergraphHamiltonian":
        """Terms whose hyperedge meets ``sites``."""
        s = set(sites)
        return HypergraphHamiltonian(self.shape, tuple(t for t in self.terms if s & set(t[0])))

    def is_commuting(self, tol: float = COMMUTE_TOL) -> bool:
        ops = [t.mat for t in self.term_ops()]
        for a, b in itertools.combinations(ops, 2):
            if np.max(np.abs(a @ b - b @ a)) > tol:
                return False
        return True


def pauli_string(label: str) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


def ising_chain(n: int, J: float = 1.0, h: float = 0.0, periodic: bool = False) -> HypergraphHamiltonian:
    """Classical Ising chain ``sum J Z_i Z_{i+1} + h sum Z_i`` on qubits ``0..n-1``."""
    shape = RegisterShape(tuple(range(n)), 2)
    terms = []
    bonds = [(i, i + 1) for i in range(n - 1)]
    if periodic and n > 2:
        bonds.append((n - 1, 0))
    for i, j in bonds:
        terms.append(((i, j), J * pauli_string("ZZ")))
    if h != 0.0:
        for i in range(n):
            terms.append(((i,), h * PAULI["Z"]))
    return HypergraphHamiltonian(shape, tuple(terms))


def heisenberg_chain(n: int, J: float = 1.0) -> HypergraphHamiltonian:
    """Non-commuting test model ``J sum (XX + YY + ZZ)`` on an open chain."""
    shape = RegisterShape(tuple(range(n)), 2)
    xyz = pauli_string("XX") + pauli_string("YY") + pauli_string("ZZ")
    return HypergraphHamiltonian(shape, tuple(((i, i + 1), J * xyz) for i in range(n - 1)))


# ----------------------------------------------------------------------------
# Gibbs states
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GibbsState:
    """``exp(-beta H) / Z`` with cached spectral data."""

    hamiltonian: HypergraphHamiltonian
    beta: float
    state: DensityState = field(repr=False)
    log_partition: float
    commuting: bool
    evals: np.ndarray = field(repr=False)
    evecs: np.ndarray = field(repr=False)

    @property
    def shape(self) -> RegisterShape:
        return self.hamiltonian.shape

    @property
    def mat(self) -> np.ndarray:
        return self.state.mat

    def log_state(self) -> np.ndarray:
        """``ln omega`` as a matrix."""
        e = -self.beta * self.evals - self.log_partition
        return (self.evecs * e) @ self.evecs.conj().T

    def marginal(self, sites) -> DensityState:
        return marginal(self.state, sites)


def gibbs(H: HypergraphHamiltonian, beta: float) -> GibbsState:
    if not np.isfinite(beta) or beta < 0:
        raise ValueError(f"beta must be finite and nonnegative, got {beta}")
    w, u = np.linalg.eigh(hermitize(H.matrix()))
    a = -beta * w
    amax = a.max()
    logz = amax + np.log(np.sum(np.exp(a - amax)))
    p = np.exp(a - logz)
    rho = (u * p) @ u.conj().T
    st = DensityState.from_matrix(H.shape, rho)
    return GibbsState(H, float(beta), st, float(logz), H.is_commuting(), w, u)


# ----------------------------------------------------------------------------
# entropies and divergences
# ----------------------------------------------------------------------------

def _eig_clip(m):
    w, u = np.linalg.eigh(hermitize(m))
    return np.clip(w, 0.0, None), u


def entropy(rho: HermitianOp) -> float:
    """Von Neumann entropy in nats."""
    w, _ = _eig_clip(rho.mat)
    w = w[w > EIG_FLOOR]
    return float(-np.sum(w * np.log(w)))


def _as_density(x) -> DensityState:
    if isinstance(x, GibbsState):
        return x.state
    return x


def rel_entropy(rho, sigma) -> float:
    """``S(rho || sigma)`` in nats; ``inf`` when supports are incompatible."""
    rho = _as_density(rho)
    if isinstance(sigma, GibbsState):
        if rho.shape != sigma.shape:
            raise ShapeError("register mismatch")
        return float(-entropy(rho) - np.real(np.vdot(rho.mat, sigma.log_state())))
    sigma = _as_density(sigma)
    if rho.shape != sigma.shape:
        raise ShapeError("register mismatch")
    ws, us = _eig_clip(sigma.mat)
    ker = ws <= 1e-12
    if np.any(ker):
        leak = np.real(np.einsum("ia,ij,ja->", us[:, ker].conj(), rho.mat, us[:, ker]))
        if leak > 1e-10:
            return float("inf")
    logs = np.where(ker, 0.0, np.log(np.where(ker, 1.0, ws)))
    rho_in = np.real(np.einsum("ia,ij,ja->a", us.conj(), rho.mat, us))
    return float(-entropy(rho) - np.sum(rho_in * logs))


def max_divergence(rho, sigma) -> float:
    """``ln inf{lambda : rho <= lambda sigma}``; ``inf`` when supports are incompatible."""
    rho = _as_density(rho)
    sigma = _as_density(sigma)
    ws, us = _eig_clip(sigma.mat)
    ker = ws <= 1e-12
    if np.any(ker):
        leak = np.real(np.einsum("ia,ij,ja->", us[:, ker].conj(), rho.mat, us[:, ker]))
        if leak > 1e-10:
            return float("inf")
    keep = ~ker
    v = us[:, keep] / np.sqrt(ws[keep])
    m = v.conj().T @ rho.mat @ v
    return float(np.log(np.linalg.eigvalsh(hermitize(m))[-1]))


def _check_disjoint(shape: RegisterShape, *blocks):
    seen = set()
    for b in blocks:
        b = set(b)
        if not b:
            raise ShapeError("empty block in partition")
        if seen & b:
            raise ShapeError("partition blocks overlap")
        shape.positions(b)
        seen |= b


def mutual_info(rho: HermitianOp, A: Sequence, B: Sequence) -> float:
    """``I(A:B)``; sites outside ``A u B`` are traced out."""
    _check_disjoint(rho.shape, A, B)
    return (entropy(marginal(rho, A)) + entropy(marginal(rho, B))
            - entropy(marginal(rho, list(A) + list(B))))


def cond_mutual_info(rho: HermitianOp, A: Sequence, B: Sequence, C: Sequence) -> float:
    """``I(A:C|B)``; sites outside ``A u B u C`` are traced out."""
    _check_disjoint(rho.shape, A, B, C)
    ab = entropy(marginal(rho, list(A) + list(B)))
    bc = entropy(marginal(rho, list(B) + list(C)))
    b = entropy(marginal(rho, B))
    abc = entropy(marginal(rho, list(A) + list(B) + list(C)))
    return ab + bc - b - abc


def entropy_continuity_gap(rho: HermitianOp, sigma: HermitianOp, w1: float) -> tuple[float, float]:
    """Entropy difference against the W1 continuity bound.

    Returns ``(|S(rho) - S(sigma)|, g(w1) + w1 ln(d^2 n))`` where
    ``g(t) = (t + 1) ln(t + 1) - t ln t``.
    """
    if rho.shape != sigma.shape:
        raise ShapeError("register mismatch")
    lhs = abs(entropy(rho) - entropy(sigma))
    t = max(float(w1), 0.0)
    g = (t + 1) * np.log1p(t) - (t * np.log(t) if t > 0 else 0.0)
    d, n = rho.shape.d, rho.shape.n
    return float(lhs), float(g + t * np.log(d * d * n))


# ----------------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------------

def microcanonical(H: HypergraphHamiltonian, E: float, Delta: float) -> DensityState:
    """Normalized projector on eigenvalues of ``H`` in the shell ``(E - Delta, E]``."""
    if Delta <= 0:
        raise ValueError("Delta must be positive")
    w, u = np.linalg.eigh(hermitize(H.matrix()))
    eps = 1e-12 * max(1.0, float(np.max(np.abs(w))))
    sel = (w > E - Delta + eps) & (w <= E + eps)
    if not np.any(sel):
        raise ValueError(f"empty energy shell at E={E}, Delta={Delta}")
    p = u[:, sel]
    return DensityState.from_matrix(H.shape, p @ p.conj().T / sel.sum())


def energy(rho: HermitianOp, H: HypergraphHamiltonian) -> float:
    return float(np.real(np.vdot(rho.mat, H.matrix())))


def energy_matched_mixture(low: DensityState, high: DensityState,
                           H: HypergraphHamiltonian, target: float) -> DensityState:
    """Convex combination of two states with ``Tr[rho H] = target``.

    Energy is linear in the mixing weight, so the weight is solved in
    closed form; the target must lie between the two energies.
    """
    e0, e1 = energy(low, H), energy(high, H)
    scale = max(1.0, op_norm(H.matrix()))
    lo, hi = min(e0, e1), max(e0, e1)
    if not lo - 1e-12 * scale <= target <= hi + 1e-12 * scale:
        raise EnergyMismatch(f"target energy {target} outside [{lo}, {hi}]")
    if abs(e1 - e0) < 1e-15 * scale:
        lam = 0.0
    else:
        lam = float(np.clip((target - e0) / (e1 - e0), 0.0, 1.0))
    return DensityState.from_matrix(low.shape, (1 - lam) * low.mat + lam * high.mat)


# ----------------------------------------------------------------------------
# random states
# ----------------------------------------------------------------------------

def haar_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def haar_pure(shape: RegisterShape, rng: np.random.Generator) -> DensityState:
    v = haar_vector(shape.dim, rng)
    return DensityState.from_matrix(shape, np.outer(v, v.conj()))


def random_mixed(shape: RegisterShape, rng: np.random.Generator, rank: int | None = None) -> DensityState:
    """Induced-measure random state ``G G^dag / Tr`` with ``G`` Ginibre."""
    k = shape.dim if rank is None else rank
    g = rng.normal(size=(shape.dim, k)) + 1j * rng.normal(size=(shape.dim, k))
    m = g @ g.conj().T
    return DensityState.from_matrix(shape, m / np.trace(m).real)


def random_product(shape: RegisterShape, rng: np.random.Generator) -> DensityState:
    local = [random_mixed(RegisterShape((0,), shape.d), rng).mat for _ in range(shape.n)]
    m = local[0]
    for a in local[1:]:
        m = np.kron(m, a)
    return DensityState.from_matrix(shape, m)


def random_diagonal(shape: RegisterShape, rng: np.random.Generator) -> DensityState:
    p = rng.dirichlet(np.ones(shape.dim))
    return DensityState.from_matrix(shape, np.diag(p))


def product_state(locals_: Sequence[np.ndarray], shape: RegisterShape) -> DensityState:
    m = np.asarray(locals_[0])
    for a in locals_[1:]:
        m = np.kron(m, a)
    return DensityState.from_matrix(shape, m)
