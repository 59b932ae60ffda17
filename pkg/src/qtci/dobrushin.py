"""Dobrushin-type contraction coefficients and TCI constants for 1D chains.

A chain is split into consecutive blocks ``A_1 .. A_m``.  Recovering block
``A_i`` from ``A_(i-1)`` and discarding ``A_(i-1)`` gives a map whose
contraction on traceless inputs, ``eta``, controls the TCI constant of a
Markov state.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .channels import ChannelRep, replacer_channel
from .concentration import TciReport
from .curvature import diamond_norm, pure_input_lower
from .linalg import (
    DensityState,
    embed_array,
    hermitize,
    marginal,
    permute_sites,
    ptrace_array,
    trace_norm,
)
from .recovery import (
    MarkovConditionError,
    _state,
    embed_superop,
    eta_tilde_map,
    markov_locality_check,
    petz_rotated,
    ptrace_superop,
)
from .states import haar_vector, max_divergence, rel_entropy
from .w1 import w1_distance

__all__ = [
    "ChainPartition", "EtaEstimate", "eta_diamond", "eta_empirical", "eta_from_maxdiv",
    "tci_markov_bound", "tci_markov_refined", "tci_nonmarkov_bound", "decay_profile",
    "fit_decay", "verify_tci_empirical", "MarkovConditionError",
]


@dataclass(frozen=True)
class ChainPartition:
    """Consecutive blocks ``A_1 .. A_m`` covering a chain."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(b) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise ValueError("partition needs nonempty blocks")
        flat = [s for b in blocks for s in b]
        if len(set(flat)) != len(flat):
            raise ValueError("partition blocks overlap")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def singletons(cls, sites: Sequence) -> "ChainPartition":
        return cls(tuple((s,) for s in sites))

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def K(self) -> int:
        return max(len(b) for b in self.blocks)

    def prefix(self, i: int) -> list:
        """Sites of ``A_1 .. A_i`` (1-based)."""
        return [s for b in self.blocks[:i] for s in b]

    def check_covers(self, sites: Sequence):
        if sorted(map(repr, self.prefix(self.m))) != sorted(map(repr, sites)):
            raise ValueError("partition does not cover the register")


def _as_partition(p) -> ChainPartition:
    return p if isinstance(p, ChainPartition) else ChainPartition(tuple(p))


@dataclass
class EtaEstimate:
    """``eta`` with the method that produced it.

    ``applicable`` is false when the method's hypothesis fails (the
    max-divergence route with ``a >= 1/2``); ``eta`` is then ``inf``.
    """

    eta: float
    method: str
    per_block: list = field(default_factory=list)
    lower: float = 0.0
    a: float | None = None
    applicable: bool = True


def _block_replacer(omega, partition: ChainPartition, i: int) -> ChannelRep:
    """``X -> Tr[X] omega_{A_i}`` from ``A_(i-1)`` to ``A_i``."""
    mid, new = partition.blocks[i - 2], partition.blocks[i - 1]
    return replacer_channel(omega.shape.sub(mid), marginal(omega, new))


def eta_diamond(omega, partition, tol: float = 1e-8, sdp: bool = True) -> EtaEstimate:
    """Sound upper bound ``max_i ||Phi~_i - omega_{A_i} Tr_{A_(i-1)}||_diamond``.

    Raises ``MarkovConditionError`` when the chain is not Markov for the
    given blocks, since the local maps then do not describe the global ones.
    """
    omega = _state(omega)
    P = _as_partition(partition)
    P.check_covers(omega.shape.sites)
    for i in range(3, P.m + 1):
        if not markov_locality_check(omega, P.blocks, i, tol):
            raise MarkovConditionError(f"recovery map for block {i} is not local")
    per, lows = [], []
    for i in range(2, P.m + 1):
        D = eta_tilde_map(omega, P.blocks, i, tol) - _block_replacer(omega, P, i)
        b = diamond_norm(D, sdp=sdp)
        per.append(b.upper)
        lows.append(b.lower)
    return EtaEstimate(max(per, default=0.0), "diamond_bound", per, max(lows, default=0.0))


def _insert_superop(state: np.ndarray, sites: Sequence, rest_shape, shape) -> np.ndarray:
    """Superoperator of ``X -> state_sites (x) X`` from ``rest_shape`` into ``shape``."""
    left = embed_array(state, shape.d, shape.n, shape.positions(sites))
    return np.kron(left, np.eye(shape.dim)) @ embed_superop(rest_shape, shape)


def _global_defect(omega, P: ChainPartition, i: int, tol: float) -> ChannelRep:
    """``Tr_{A_(i-1)} Phi_{A_1^(i-1) -> A_1^i} - omega_{A_i} (x) Tr_{A_(i-1)}`` on the full prefix."""
    prefix = P.prefix(i - 1)
    new = list(P.blocks[i - 1])
    mid = list(P.blocks[i - 2])
    phi = petz_rotated(omega, prefix, new, tol)
    tr = ptrace_superop(phi.out_shape, mid)
    out_shape = omega.shape.sub([s for s in phi.out_shape.sites if s not in mid])
    left = ptrace_superop(phi.in_shape, mid)
    far = [s for s in prefix if s not in mid]
    if far:
        far_shape = omega.shape.sub(far)
        rep = _insert_superop(marginal(omega, new).mat, new, far_shape, out_shape) @ left
    else:
        rep = np.outer(marginal(omega, new).mat.reshape(-1), np.eye(phi.in_shape.dim).reshape(-1))
    return ChannelRep(phi.in_shape, out_shape, tr @ phi.superop - rep)


def eta_empirical(omega, partition, trials: int = 64, seed: int = 0, tol: float = 1e-8) -> EtaEstimate:
    """Lower bound on ``eta`` from the global maps.

    Two searches per block: random pairs of states differing only on
    ``A_(i-1)`` pushed through ``Phi~_i``, and alternating ascent of
    ``||(Phi~_i - omega_{A_i} Tr_{A_(i-1)})(psi)||_1`` over pure ``psi``.
    Every value found is attained, so the result is a lower bound on the
    contraction coefficient whatever the Markov structure.
    """
    omega = _state(omega)
    P = _as_partition(partition)
    rng = np.random.default_rng(seed)
    d = omega.shape.d
    per = []
    for i in range(2, P.m + 1):
        D = _global_defect(omega, P, i, tol)
        mid = list(P.blocks[i - 2])
        in_shape = D.in_shape
        far = [s for s in in_shape.sites if s not in mid]
        best = 0.0
        dm = d ** len(mid)
        for _ in range(trials):
            q, _r = np.linalg.qr(rng.normal(size=(dm, 2)) + 1j * rng.normal(size=(dm, 2)))
            loc = np.outer(q[:, 0], q[:, 0].conj()) - np.outer(q[:, 1], q[:, 1].conj())
            if far:
                u = haar_vector(d ** len(far), rng)
                X = np.kron(loc, np.outer(u, u.conj()))
                order = in_shape.positions(mid + far)
                X = permute_sites(X, d, list(np.argsort(order)))
            else:
                X = loc
            best = max(best, trace_norm(D.apply_array(X)) / trace_norm(X))
        J = hermitize(D.choi())
        val, _u = pure_input_lower(J, D.din, D.dout, 1, rng, restarts=max(2, trials // 16))
        per.append(max(best, val))
    return EtaEstimate(max(per, default=0.0), "empirical_lower", per, max(per, default=0.0))


def eta_from_maxdiv(omega, partition) -> EtaEstimate:
    """``eta = sqrt(2a)`` with ``a = max_i S_inf(omega_{A_i} (x) omega_{A_(i+1)} || omega_{A_i A_(i+1)})``.

    When ``a >= 1/2`` the estimate is returned with ``applicable=False``.
    """
    omega = _state(omega)
    P = _as_partition(partition)
    per = []
    for i in range(P.m - 1):
        a_blk, b_blk = list(P.blocks[i]), list(P.blocks[i + 1])
        joint = marginal(omega, a_blk + b_blk)
        prod_m = np.kron(marginal(omega, a_blk).mat, marginal(omega, b_blk).mat)
        # joint marginal sites are in register order; reorder the product to match
        lab = a_blk + b_blk
        perm = [lab.index(s) for s in joint.shape.sites]
        prod = DensityState.from_matrix(joint.shape, permute_sites(prod_m, omega.shape.d, perm))
        per.append(max(0.0, max_divergence(prod, joint)))
    a = max(per, default=0.0)
    if a >= 0.5:
        return EtaEstimate(math.inf, "maxdiv_bound", per, 0.0, a, applicable=False)
    return EtaEstimate(math.sqrt(2 * a), "maxdiv_bound", per, 0.0, a)


def _check_eta(eta):
    if not 0 <= eta < 1:
        raise ValueError(f"eta must lie in [0, 1), got {eta}")


def tci_markov_bound(partition, eta: float) -> float:
    """``2 m K^2 (1/(1-eta) + 1)^2``."""
    _check_eta(eta)
    P = _as_partition(partition)
    return 2 * P.m * P.K ** 2 * (1 / (1 - eta) + 1) ** 2


def tci_markov_refined(S: float, partition, eta: float) -> float:
    """State-dependent W1 bound ``K (1/(1-eta) + 1) 2m sqrt(1 - exp(-S/m))``."""
    _check_eta(eta)
    P = _as_partition(partition)
    return P.K * (1 / (1 - eta) + 1) * 2 * P.m * math.sqrt(-math.expm1(-S / P.m))


def tci_nonmarkov_bound(n: int, C: float, eta: float) -> tuple[float, int]:
    """TCI constant for a chain with correlations decaying as ``C eta^k``.

    Returns ``(bound, k0)`` with ``k0 = ceil(-ln(C^2 n) / (2 ln eta))``.
    When ``C^2 n >= 1`` the closed form
    ``8 n (2 + (C+1)/(1-eta) - ln(C^2 n)/(2 ln eta))^2`` is returned.
    Otherwise ``k0`` would be negative; it is clamped to 0 and the bound is
    the unsimplified ``8 n (1 + C (1 + sqrt(n)) / (1-eta))^2``.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    if C < 0 or n < 1:
        raise ValueError("need C >= 0 and n >= 1")
    Cg = max(C, 1e-12)
    x = -math.log(Cg ** 2 * n) / (2 * math.log(eta))
    if Cg ** 2 * n >= 1:
        k0 = math.ceil(x)
        return 8 * n * (2 + (C + 1) / (1 - eta) + x) ** 2, int(k0)
    return 8 * n * (1 + C * (1 + math.sqrt(n)) / (1 - eta)) ** 2, 0


# ----------------------------------------------------------------------------
# decay of correlations
# ----------------------------------------------------------------------------

def _prefix_maps(omega, tol):
    """``Phi_i`` recovering site ``i`` from ``1 .. i-1`` for a chain in register order."""
    sites = list(omega.shape.sites)
    return {i: petz_rotated(omega, sites[:i - 1], [sites[i - 1]], tol) for i in range(2, len(sites) + 1)}


def decay_profile(omega, trials: int = 16, seed: int = 0, tol: float = 1e-8) -> dict:
    """Largest sampled left-hand sides of the two decay hypotheses, per distance ``k``.

    ``recover[k]``: ``||Tr_{i-k..i} Phi_i(tau) - tau_{1..i-k-1}||_1`` over pure
    ``tau`` on ``1..i-1``.  ``propagate[k]``: ``||Tr_{i-k+1..i+k}(Phi_n o .. o
    Phi_{i+1})(tau) - tau_{1..i-k} (x) omega_{i+k+1..n}||_1`` over pure ``tau``
    on ``1..i``.  Sites are taken in register order.
    """
    omega = _state(omega)
    sites = list(omega.shape.sites)
    n, d = len(sites), omega.shape.d
    rng = np.random.default_rng(seed)
    maps = _prefix_maps(omega, tol)
    recover: dict[int, float] = {}
    propagate: dict[int, float] = {}
    for i in range(1, n + 1):
        for _ in range(trials):
            if i >= 2:
                v = haar_vector(d ** (i - 1), rng)
                tau = np.outer(v, v.conj())
                out = maps[i].apply_array(tau)
                sh = maps[i].out_shape
                for k in range(0, i - 1):
                    drop = sites[i - k - 1:i]
                    keep = sites[:i - k - 1]
                    a = _ptrace(out, sh, drop)
                    b = _ptrace(tau, maps[i].in_shape, [s for s in sites[:i - 1] if s not in keep])
                    recover[k] = max(recover.get(k, 0.0), trace_norm(a - b))
            v = haar_vector(d ** i, rng)
            tau = np.outer(v, v.conj())
            cur, sh = tau, omega.shape.sub(sites[:i])
            for j in range(i + 1, n + 1):
                cur, sh = maps[j].apply_array(cur), maps[j].out_shape
            for k in range(0, max(i, n - i) + 1):
                lo, hi = max(i - k, 0), min(i + k, n)
                a = _ptrace(cur, sh, sites[lo:hi]) if hi > lo else cur
                left, right = sites[:lo], sites[hi:]
                parts = []
                if left:
                    parts.append((left, _ptrace(tau, omega.shape.sub(sites[:i]), sites[lo:i])))
                if right:
                    parts.append((right, marginal(omega, right).mat))
                if not parts:
                    continue
                b = parts[0][1] if len(parts) == 1 else np.kron(parts[0][1], parts[1][1])
                propagate[k] = max(propagate.get(k, 0.0), trace_norm(a - b))
    return {"recover": recover, "propagate": propagate}


def _ptrace(x, shape, traced):
    if not traced:
        return x
    return ptrace_array(x, shape.d, shape.n, shape.positions(traced))


def fit_decay(profile: dict, floor: float = 1e-13) -> tuple[float, float]:
    """Least-squares fit of ``log dist_k = log C + k log eta`` over both hypotheses.

    Distances at or below ``floor`` carry no slope information and are
    dropped; with fewer than two usable points ``(max dist, 0)`` is returned.
    The fit is descriptive: the returned pair is not certified to dominate
    every sampled distance.
    """
    ks, ys = [], []
    for key in ("recover", "propagate"):
        for k, v in profile.get(key, {}).items():
            if v > floor:
                ks.append(k)
                ys.append(math.log(v))
    if len(set(ks)) < 2:
        return (math.exp(max(ys)) if ys else 0.0), 0.0
    slope, icpt = np.polyfit(np.array(ks, float), np.array(ys), 1)
    return float(math.exp(icpt)), float(min(math.exp(slope), 1.0))


# ----------------------------------------------------------------------------
# empirical TCI verification
# ----------------------------------------------------------------------------

def _tci_trial(omega: DensityState, ss: np.random.SeedSequence, w1_tol: float):
    rng = np.random.default_rng(ss)
    v = haar_vector(omega.shape.dim, rng)
    lam = 10.0 ** rng.uniform(-3.0, 0.0)
    mat = lam * np.outer(v, v.conj()) + (1 - lam) * omega.mat
    rho = DensityState.from_matrix(omega.shape, mat)
    S = rel_entropy(rho, omega)
    if not S > 1e-12:
        return None
    cert = w1_distance(rho, omega, tol=w1_tol)
    return cert.value_upper ** 2 / S, cert.value_lower ** 2 / S


def verify_tci_empirical(omega, constant: float, trials: int = 200, seed: int = 0,
                         slack: float = 1e-6, workers: int = 1, w1_tol: float = 1e-6,
                         bounds: dict | None = None) -> TciReport:
    """Test ``||rho - omega||_W1^2 <= constant * S(rho||omega)`` on random states.

    States are mixtures ``lam psi + (1 - lam) omega`` with Haar-random pure
    ``psi`` and ``lam`` log-uniform in ``[1e-3, 1]``.  Each trial gets its own
    stream spawned from ``seed``, so results do not depend on ``workers``.
    ``passed`` compares the certified upper ratio with the constant;
    ``refuted`` is set only when even the dual lower ratio exceeds it.
    """
    if not constant > 0:
        raise ValueError("constant must be positive")
    omega = _state(omega)
    streams = np.random.SeedSequence(seed).spawn(trials)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            res = list(ex.map(lambda s: _tci_trial(omega, s, w1_tol), streams))
    else:
        res = [_tci_trial(omega, s, w1_tol) for s in streams]
    res = [r for r in res if r is not None]
    up = max((r[0] for r in res), default=0.0)
    lo = max((r[1] for r in res), default=0.0)
    b = dict(bounds or {})
    b.setdefault("tested", float(constant))
    return TciReport(bounds=b, empirical_max_ratio_upper=float(up),
                     empirical_max_ratio_lower=float(lo), trials=trials, seed=seed,
                     passed=up <= constant + slack, refuted=lo > constant + slack,
                     constant=float(constant), used=len(res))
