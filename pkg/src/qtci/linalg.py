"""Dense linear algebra on finite spin registers.

Operators live on a register of ``n`` sites with local dimension ``d``.
Tensor factors are ordered like ``RegisterShape.sites``; every function
that takes site labels maps them to positions through the shape.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

HERM_TOL = 1e-10
PSD_TOL = 1e-10
TRACE_TOL = 1e-10
PD_FLOOR = 1e-12


class ShapeError(ValueError):
    """Raised when operator dimensions do not match a register."""


class NotHermitianError(ValueError):
    pass


class NotPositiveError(ValueError):
    pass


# ----------------------------------------------------------------------------
# registers and operators
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class RegisterShape:
    """Ordered set of site labels, each carrying a ``d``-level system."""

    sites: tuple
    d: int

    def __post_init__(self):
        sites = tuple(self.sites)
        object.__setattr__(self, "sites", sites)
        if self.d < 2:
            raise ShapeError(f"local dimension must be >= 2, got {self.d}")
        if len(sites) == 0:
            raise ShapeError("a register needs at least one site")
        if len(set(sites)) != len(sites):
            raise ShapeError(f"duplicate site labels in {sites}")

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def dim(self) -> int:
        return self.d ** self.n

    def index(self, site) -> int:
        try:
            return self.sites.index(site)
        except ValueError:
            raise ShapeError(f"site {site!r} not in register {self.sites}") from None

    def positions(self, sites: Iterable) -> list[int]:
        return [self.index(s) for s in sites]

    def sub(self, sites: Iterable) -> "RegisterShape":
        """Sub-register on ``sites``, kept in this register's order."""
        keep = set(sites)
        missing = keep - set(self.sites)
        if missing:
            raise ShapeError(f"sites {sorted(missing, key=repr)} not in register {self.sites}")
        return RegisterShape(tuple(s for s in self.sites if s in keep), self.d)

    def complement(self, sites: Iterable) -> tuple:
        drop = set(sites)
        return tuple(s for s in self.sites if s not in drop)


def _as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {m.shape}")
    return m


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True, eq=False)
class HermitianOp:
    """Hermitian operator on a register.

    Construction symmetrizes inputs whose entrywise deviation from
    Hermiticity is below ``HERM_TOL`` and rejects anything worse.
    """

    shape: RegisterShape
    mat: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _as_matrix(self.mat)
        if m.shape[0] != self.shape.dim:
            raise ShapeError(
                f"matrix of size {m.shape[0]} does not fit register of dim {self.shape.dim}")
        dev = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
        if dev > HERM_TOL:
            raise NotHermitianError(f"matrix deviates from Hermitian by {dev:.3e}")
        m = hermitize(m)
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def dim(self) -> int:
        return self.shape.dim

    @property
    def n(self) -> int:
        return self.shape.n

    def trace(self) -> float:
        return float(np.trace(self.mat).real)

    def expect(self, rho: "HermitianOp") -> float:
        """``Tr[rho X]``."""
        _check_same(self.shape, rho.shape)
        return float(np.real(np.vdot(rho.mat, self.mat)))

    def _wrap(self, m) -> "HermitianOp":
        return HermitianOp(self.shape, m)

    def __add__(self, other):
        if isinstance(other, HermitianOp):
            _check_same(self.shape, other.shape)
            return self._wrap(self.mat + other.mat)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, HermitianOp):
            _check_same(self.shape, other.shape)
            return self._wrap(self.mat - other.mat)
        return NotImplemented

    def __neg__(self):
        return self._wrap(-self.mat)

    def __mul__(self, c):
        if np.isscalar(c) and np.isreal(c):
            return self._wrap(float(np.real(c)) * self.mat)
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)


@dataclass(frozen=True, eq=False)
class DensityState(HermitianOp):
    """Positive semidefinite, unit-trace Hermitian operator."""

    def __post_init__(self):
        super().__post_init__()
        tr = np.trace(self.mat).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise NotPositiveError(f"trace {tr:.12f} differs from 1")
        lmin = np.linalg.eigvalsh(self.mat)[0]
        if lmin < -PSD_TOL:
            raise NotPositiveError(f"minimum eigenvalue {lmin:.3e} is negative")

    def _wrap(self, m):
        return HermitianOp(self.shape, m)

    @classmethod
    def from_matrix(cls, shape: RegisterShape, m: np.ndarray) -> "DensityState":
        """Wrap a computed state, clipping round-off negativity and renormalizing."""
        m = hermitize(_as_matrix(m))
        w, u = np.linalg.eigh(m)
        if w[0] < -1e-8:
            raise NotPositiveError(f"minimum eigenvalue {w[0]:.3e} is negative")
        if w[0] < 0:
            w = np.clip(w, 0.0, None)
            m = (u * w) @ u.conj().T
        return cls(shape, m / np.trace(m).real)


def _check_same(a: RegisterShape, b: RegisterShape):
    if a != b:
        raise ShapeError(f"register mismatch: {a} vs {b}")


def identity(shape: RegisterShape) -> HermitianOp:
    return HermitianOp(shape, np.eye(shape.dim))


def maximally_mixed(shape: RegisterShape) -> DensityState:
    return DensityState(shape, np.eye(shape.dim) / shape.dim)


# ----------------------------------------------------------------------------
# tensor manipulations on raw arrays
# ----------------------------------------------------------------------------

def permute_sites(m: np.ndarray, d: int, perm: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: output factor ``k`` is input factor ``perm[k]``."""
    n = len(perm)
    t = m.reshape((d,) * (2 * n))
    axes = list(perm) + [p + n for p in perm]
    return t.transpose(axes).reshape(d ** n, d ** n)


def ptrace_array(m: np.ndarray, d: int, n: int, traced: Sequence[int]) -> np.ndarray:
    """Partial trace over the factor positions ``traced`` of an ``n``-site matrix."""
    traced = sorted(set(traced))
    if not traced:
        return m
    keep = [k for k in range(n) if k not in traced]
    t = m.reshape((d,) * (2 * n))
    letters = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"
    row = list(letters[:n])
    col = list(letters[n:2 * n])
    for k in traced:
        col[k] = row[k]
    out = "".join(row[k] for k in keep) + "".join(col[k] for k in keep)
    r = np.einsum("".join(row) + "".join(col) + "->" + out, t)
    dk = d ** len(keep)
    return r.reshape(dk, dk)


def embed_array(local: np.ndarray, d: int, n: int, positions: Sequence[int]) -> np.ndarray:
    """``local`` on factor ``positions`` tensored with identity elsewhere."""
    positions = list(positions)
    rest = [k for k in range(n) if k not in positions]
    full = np.kron(local, np.eye(d ** len(rest)))
    order = positions + rest
    inv = np.argsort(order)
    return permute_sites(full, d, inv)


# ----------------------------------------------------------------------------
# public tensor ops
# ----------------------------------------------------------------------------

def embed(local: HermitianOp, target_sites: Sequence, shape: RegisterShape) -> HermitianOp:
    """Place ``local`` on ``target_sites`` of ``shape`` and pad with identities.

    The tensor factors of ``local`` are matched to ``target_sites`` in the
    order given, regardless of the labels in ``local.shape``.
    """
    target_sites = list(target_sites)
    if len(set(target_sites)) != len(target_sites):
        raise ShapeError("target sites must be distinct")
    if local.shape.d != shape.d or local.shape.n != len(target_sites):
        raise ShapeError(
            f"local operator on {local.shape.n} sites of dim {local.shape.d} "
            f"does not fit {len(target_sites)} sites of dim {shape.d}")
    pos = shape.positions(target_sites)
    return HermitianOp(shape, embed_array(local.mat, shape.d, shape.n, pos))


def partial_trace(x: HermitianOp, traced_sites: Iterable) -> HermitianOp:
    """Trace out ``traced_sites``; the result lives on the remaining sites."""
    traced_sites = list(traced_sites)
    pos = x.shape.positions(traced_sites)
    keep = x.shape.complement(traced_sites)
    if not keep:
        raise ShapeError("cannot trace out every site; use .trace()")
    m = ptrace_array(x.mat, x.shape.d, x.shape.n, pos)
    cls = DensityState if isinstance(x, DensityState) else HermitianOp
    if cls is DensityState:
        return DensityState.from_matrix(RegisterShape(keep, x.shape.d), m)
    return HermitianOp(RegisterShape(keep, x.shape.d), m)


def marginal(x: HermitianOp, sites: Iterable) -> HermitianOp:
    """Reduced operator on ``sites`` (kept in register order)."""
    keep = set(sites)
    return partial_trace(x, [s for s in x.shape.sites if s not in keep])


def herm_eig(x) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching orthonormal eigenvectors (columns)."""
    m = x.mat if isinstance(x, HermitianOp) else hermitize(_as_matrix(x))
    w, u = np.linalg.eigh(m)
    return w[::-1], u[:, ::-1]


def _pd_eig(x, clip: bool):
    m = x.mat if isinstance(x, HermitianOp) else hermitize(_as_matrix(x))
    w, u = np.linalg.eigh(m)
    floor = PD_FLOOR * max(1.0, float(np.abs(w).max()))
    clipped = bool(w[0] <= floor)
    if clipped and not clip:
        raise NotPositiveError(f"need a positive definite input, min eig {w[0]:.3e}")
    return np.maximum(w, floor), u, clipped


def mat_power(x, z: complex, *, clip: bool = False) -> np.ndarray:
    """``x**z`` for positive definite ``x`` and complex ``z`` (principal branch).

    Returns a plain array since complex powers need not be Hermitian. With
    ``clip`` the spectrum is floored at ``1e-12 max(1, ||x||)`` instead of
    raising.
    """
    w, u, _ = _pd_eig(x, clip)
    return (u * np.exp(complex(z) * np.log(w))) @ u.conj().T


def mat_exp(x) -> np.ndarray:
    m = x.mat if isinstance(x, HermitianOp) else hermitize(_as_matrix(x))
    w, u = np.linalg.eigh(m)
    shift = w[-1]
    # scaled to avoid overflow; callers normalize when they need traces
    return (u * np.exp(w - shift)) @ u.conj().T * np.exp(shift)


def mat_log(x, *, clip: bool = False) -> np.ndarray:
    w, u, _ = _pd_eig(x, clip)
    return (u * np.log(w)) @ u.conj().T


def trace_norm(x) -> float:
    m = x.mat if isinstance(x, HermitianOp) else np.asarray(x)
    if np.allclose(m, m.conj().T, atol=1e-12):
        return float(np.sum(np.abs(np.linalg.eigvalsh(hermitize(m)))))
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def op_norm(x) -> float:
    m = x.mat if isinstance(x, HermitianOp) else np.asarray(x)
    if np.allclose(m, m.conj().T, atol=1e-12):
        return float(np.max(np.abs(np.linalg.eigvalsh(hermitize(m)))))
    return float(np.linalg.norm(m, 2))


# ----------------------------------------------------------------------------
# quadrature for the rotated Petz map
# ----------------------------------------------------------------------------

def mu0_density(t):
    """Probability density pi / (2 (cosh(pi t) + 1)) on the real line."""
    t = np.asarray(t, dtype=float)
    # sech^2 written with e^(-|x|) so large |t| underflows to 0 instead of overflowing
    e = np.exp(-np.pi * np.abs(t))
    return np.pi * e / (1 + e) ** 2


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integrals against ``mu0``.

    ``residual`` bounds the mass outside the truncation window, so the
    weights add up to ``1 - residual`` up to the composite-rule error.
    """

    nodes: np.ndarray
    weights: np.ndarray
    truncation: float
    residual: float

    def __len__(self):
        return len(self.nodes)


def mu0_quadrature(tol: float = 1e-8, order: int = 8) -> QuadratureRule:
    """Truncated composite Gauss-Legendre rule for ``mu0``.

    The window ``[-T, T]`` is chosen so that the tail mass ``2 exp(-pi T)``
    is at most ``tol / 2``; panels are doubled until the integral of 1
    moves by less than ``tol / 2``.
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    T = np.log(4.0 / tol) / np.pi
    residual = 1.0 - np.tanh(0.5 * np.pi * T)
    x, w = np.polynomial.legendre.leggauss(order)

    def rule(panels):
        edges = np.linspace(-T, T, panels + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * w[None, :]).ravel() * mu0_density(nodes)
        return nodes, weights

    panels = 2
    nodes, weights = rule(panels)
    total = weights.sum()
    while True:
        panels *= 2
        n2, w2 = rule(panels)
        t2 = w2.sum()
        if abs(t2 - total) < tol / 2 or panels > 4096:
            nodes, weights, total = n2, w2, t2
            break
        nodes, weights, total = n2, w2, t2
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes, weights, float(T), float(residual))


# ----------------------------------------------------------------------------
# matrix-power perturbation
# ----------------------------------------------------------------------------

def power_perturbation_check(A, B, z: complex) -> tuple[float, float]:
    """Compare ``||A^z - B^z||`` with ``|z| M^(1+|Re z|) ||A - B||``.

    ``M`` is the largest of the operator norms of ``A``, ``B`` and their
    inverses. Returns ``(lhs, rhs)``.
    """
    a = A.mat if isinstance(A, HermitianOp) else hermitize(_as_matrix(A))
    b = B.mat if isinstance(B, HermitianOp) else hermitize(_as_matrix(B))
    wa = np.linalg.eigvalsh(a)
    wb = np.linalg.eigvalsh(b)
    if wa[0] <= 0 or wb[0] <= 0:
        raise NotPositiveError("power_perturbation_check needs positive definite inputs")
    M = max(wa[-1], 1 / wa[0], wb[-1], 1 / wb[0])
    lhs = op_norm(mat_power(a, z) - mat_power(b, z))
    rhs = abs(z) * M ** (1 + abs(complex(z).real)) * op_norm(a - b)
    return float(lhs), float(rhs)
