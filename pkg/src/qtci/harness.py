"""Experiment configs, task orchestration and deterministic reports.

A config is JSON::

    {
      "system": {"d": 2, "sites": [0, 1, 2],
                 "edges": [{"sites": [0, 1], "pauli": "ZZ", "coeff": 1.0},
                           {"sites": [2], "matrix": [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]}]},
      "betas": [0.1, 0.2],
      "tasks": ["w1", "tci"],
      "seed": 7,
      "trials": 20,
      "tolerances": {"quadrature": 1e-8, "w1": 1e-6, "slack": 1e-6},
      "partition": [[0], [1], [2]],
      "output": "report.json"
    }

Complex matrix entries are ``[re, im]`` pairs in row-major order.
Every inequality in a report is stored as ``lhs``, ``rhs``, ``slack`` and
``verdict = lhs <= rhs + slack``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import metadata, resources

import numpy as np

from . import concentration as conc
from . import curvature as curv
from . import dobrushin as dob
from .linalg import (
    DensityState,
    HermitianOp,
    NotHermitianError,
    RegisterShape,
    embed_array,
    marginal,
    op_norm,
    ptrace_array,
    trace_norm,
)
from .recovery import MarkovConditionError, chain_recovery_bounds, petz_rotated, recoverability_gap
from .states import (
    PAULI,
    HypergraphHamiltonian,
    energy,
    energy_matched_mixture,
    entropy_continuity_gap,
    gibbs,
    microcanonical,
    random_mixed,
    random_product,
    rel_entropy,
)
from .w1 import lip_const, marginal_lower_bound, w1_distance

TASKS = ("w1", "lipschitz", "recovery", "dobrushin", "curvature", "tci", "concentration", "ensembles")
MAX_DIM = 2 ** 12
DEFAULT_TOL = {"quadrature": 1e-8, "w1": 1e-6, "slack": 1e-6}


class ConfigError(ValueError):
    """Invalid experiment config; the message starts with the offending path."""


@dataclass
class ExperimentConfig:
    hamiltonian: HypergraphHamiltonian
    betas: list
    tasks: list
    seed: int
    trials: int = 20
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOL))
    partition: list | None = None
    output: str | None = None
    sdp: bool = True
    raw: dict = field(default_factory=dict)


# ----------------------------------------------------------------------------
# parsing
# ----------------------------------------------------------------------------

def _matrix(entry, path):
    try:
        arr = np.asarray(entry, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: entries must be [re, im] pairs") from None
    if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigError(f"{path}: expected a square matrix of [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _pauli(label, path):
    if not isinstance(label, str) or not label or any(c not in PAULI for c in label):
        raise ConfigError(f"{path}: Pauli labels use the letters I, X, Y, Z")
    out = np.eye(1, dtype=complex)
    for ch in label:
        out = np.kron(out, PAULI[ch])
    return out


def _system(sysd, allow_large):
    if not isinstance(sysd, dict):
        raise ConfigError("system: must be an object")
    d = sysd.get("d")
    if not isinstance(d, int) or d < 2:
        raise ConfigError("system.d: must be an integer >= 2")
    sites = sysd.get("sites")
    if isinstance(sites, int):
        sites = list(range(sites))
    if not isinstance(sites, list) or not sites:
        raise ConfigError("system.sites: must be a nonempty list or a site count")
    try:
        shape = RegisterShape(tuple(sites), d)
    except ValueError as e:
        raise ConfigError(f"system.sites: {e}") from None
    if shape.dim > MAX_DIM and not allow_large:
        raise ConfigError(f"system: dimension {shape.dim} exceeds {MAX_DIM}; pass --allow-large")
    terms = []
    for k, e in enumerate(sysd.get("edges", [])):
        path = f"system.edges[{k}]"
        if not isinstance(e, dict) or "sites" not in e:
            raise ConfigError(f"{path}: needs 'sites'")
        es = tuple(e["sites"])
        if any(s not in shape.sites for s in es) or len(set(es)) != len(es) or not es:
            raise ConfigError(f"{path}.sites: must be distinct sites of the register")
        if "matrix" in e:
            m = _matrix(e["matrix"], f"{path}.matrix")
        elif "pauli" in e:
            if d != 2:
                raise ConfigError(f"{path}.pauli: Pauli terms need d = 2")
            m = _pauli(e["pauli"], f"{path}.pauli")
        else:
            raise ConfigError(f"{path}: needs 'matrix' or 'pauli'")
        if m.shape[0] != d ** len(es):
            raise ConfigError(f"{path}: matrix size {m.shape[0]} does not match {len(es)} sites")
        coeff = e.get("coeff", 1.0)
        if not isinstance(coeff, (int, float)):
            raise ConfigError(f"{path}.coeff: must be real")
        m = coeff * m
        try:
            h = HermitianOp(RegisterShape(tuple(range(len(es))), d), m)
        except NotHermitianError:
            raise ConfigError(f"{path}: term on sites {list(es)} is not Hermitian") from None
        terms.append((es, h))
    return HypergraphHamiltonian(shape, tuple(terms))


def parse_config(text: str | bytes | dict, allow_large: bool = False) -> ExperimentConfig:
    """Validate a JSON config; errors name the offending field."""
    if isinstance(text, dict):
        raw = text
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"<root>: invalid JSON ({e.msg} at line {e.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>: must be an object")
    known = {"system", "beta", "betas", "tasks", "seed", "trials", "tolerances",
             "partition", "output", "sdp", "name", "description"}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"{extra[0]}: unknown field")
    if "system" not in raw:
        raise ConfigError("system: missing")
    H = _system(raw["system"], allow_large)
    if "seed" not in raw:
        raise ConfigError("seed: missing (runs must be seeded)")
    seed = raw["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")
    if "betas" in raw:
        betas = raw["betas"]
    elif "beta" in raw:
        betas = [raw["beta"]]
    else:
        raise ConfigError("beta: missing ('beta' or 'betas')")
    if not isinstance(betas, list) or not betas or not all(
            isinstance(b, (int, float)) and not isinstance(b, bool) and math.isfinite(b) and b >= 0
            for b in betas):
        raise ConfigError("betas: must be a nonempty list of finite nonnegative numbers")
    tasks = raw.get("tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("tasks: must be a nonempty list")
    for k, t in enumerate(tasks):
        if t not in TASKS:
            raise ConfigError(f"tasks[{k}]: unknown task {t!r}; choose from {', '.join(TASKS)}")
    trials = raw.get("trials", 20)
    if not isinstance(trials, int) or trials < 1:
        raise ConfigError("trials: must be a positive integer")
    tol = dict(DEFAULT_TOL)
    for k, v in raw.get("tolerances", {}).items():
        if k not in DEFAULT_TOL:
            raise ConfigError(f"tolerances.{k}: unknown tolerance")
        if not isinstance(v, (int, float)) or not v > 0:
            raise ConfigError(f"tolerances.{k}: must be positive")
        tol[k] = float(v)
    part = raw.get("partition")
    if part is not None:
        try:
            P = dob.ChainPartition(tuple(tuple(b) for b in part))
            P.check_covers(H.shape.sites)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"partition: {e}") from None
    sdp = raw.get("sdp", True)
    if not isinstance(sdp, bool):
        raise ConfigError("sdp: must be a boolean")
    return ExperimentConfig(H, [float(b) for b in betas], list(tasks), seed, trials, tol,
                            part, raw.get("output"), sdp, raw)


def load_demo(name: str) -> str:
    try:
        return resources.files("qtci").joinpath("demos").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ConfigError(f"demo: unknown demo {name!r}; choose from {', '.join(demo_names())}") from None


def demo_names() -> list:
    d = resources.files("qtci").joinpath("demos")
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


# ----------------------------------------------------------------------------
# running
# ----------------------------------------------------------------------------

class _Task:
    """Collects values and assertions for one task at one beta."""

    def __init__(self, name, beta):
        self.name, self.beta = name, beta
        self.values: dict = {}
        self.assertions: list = []
        self.notes: list = []

    def check(self, name, lhs, rhs, slack=0.0):
        lhs, rhs, slack = float(lhs), float(rhs), float(slack)
        self.assertions.append({"name": name, "lhs": lhs, "rhs": rhs, "slack": slack,
                                "verdict": bool(lhs <= rhs + slack)})

    def as_dict(self):
        out = {"task": self.name, "beta": self.beta, "values": self.values,
               "assertions": self.assertions}
        if self.notes:
            out["notes"] = self.notes
        return out


class _Context:
    def __init__(self, cfg: ExperimentConfig, beta: float, workers: int):
        self.cfg, self.beta, self.workers = cfg, beta, workers
        self.H = cfg.hamiltonian
        self.omega = gibbs(self.H, beta)
        self.shape = self.H.shape
        self.tol = cfg.tolerances
        self._cache: dict = {}

    def rng(self, task: str) -> np.random.Generator:
        # one stream per (task, beta) so task order does not change results
        key = [self.cfg.seed, TASKS.index(task), int(round(self.beta * 1e9))]
        return np.random.default_rng(np.random.SeedSequence(key))

    def seed_for(self, task: str) -> int:
        return int(self.rng(task).integers(2 ** 31))

    @property
    def partition(self):
        if self.cfg.partition is not None:
            return dob.ChainPartition(tuple(tuple(b) for b in self.cfg.partition))
        return dob.ChainPartition.singletons(self.shape.sites)

    def is_product(self) -> bool:
        return all(len(s) == 1 for s, _ in self.H.terms)

    def markov(self):
        if "markov" not in self._cache:
            try:
                eta = dob.eta_diamond(self.omega, self.partition, self.tol["quadrature"], self.cfg.sdp)
            except MarkovConditionError as e:
                eta = e
            self._cache["markov"] = eta
        return self._cache["markov"]

    def contraction(self):
        if "curv" not in self._cache:
            if not self.omega.commuting:
                self._cache["curv"] = None
            else:
                self._cache["curv"] = curv.contraction_coefficient(
                    self.omega, self.tol["quadrature"], seed=self.seed_for("curvature"),
                    restarts=4, sweeps=15, sdp=self.cfg.sdp)
        return self._cache["curv"]

    def certified_constants(self, with_curvature: bool) -> dict:
        """TCI constants whose hypotheses hold for this Gibbs state."""
        out = {}
        n = self.shape.n
        if self.is_product():
            out["product"] = conc.product_tci_constant(n)
        eta = self.markov()
        if not isinstance(eta, Exception) and eta.eta < 1:
            out["markov"] = dob.tci_markov_bound(self.partition, eta.eta)
        if with_curvature:
            ce = self.contraction()
            if ce is not None and ce.kappa > 0 and self.H.max_neighborhood() >= 1:
                out["curvature"] = curv.tci_curvature_bound(n, ce.N, ce.kappa)
        return out


def _task_w1(ctx: _Context, T: _Task):
    rng = ctx.rng("w1")
    sh, d = ctx.shape, ctx.shape.d
    tol = ctx.tol["w1"]
    worst_exact = worst_gap = 0.0
    for _ in range(ctx.cfg.trials):
        v = sh.sites[int(rng.integers(sh.n))]
        base = random_mixed(sh, rng)
        # replace site v of base by another local state: the pair differs on v only
        other = random_mixed(sh.sub([v]), rng).mat
        rest = [s for s in sh.sites if s != v]
        if rest:
            red = ptrace_array(base.mat, d, sh.n, [sh.index(v)])
            swapped = embed_array(red, d, sh.n, sh.positions(rest)) @ embed_array(other, d, sh.n, [sh.index(v)])
        else:
            swapped = other
        sigma = DensityState.from_matrix(sh, swapped)
        cert = w1_distance(base, sigma, tol=tol)
        exact = 0.5 * trace_norm(base.mat - sigma.mat)
        worst_exact = max(worst_exact, abs(cert.value - exact))
        worst_gap = max(worst_gap, cert.gap)
    T.check("one_site_pairs_value_vs_half_trace_norm", worst_exact, 0.0, 1e-5)
    T.check("one_site_pairs_duality_gap", worst_gap, 0.0, 1e-4)
    worst = 0.0
    for _ in range(ctx.cfg.trials):
        a, b = random_product(sh, rng), random_product(sh, rng)
        cert = w1_distance(a, b, tol=tol)
        worst = max(worst, abs(cert.value - marginal_lower_bound(a, b)))
    T.check("product_pairs_value_vs_marginal_sum", worst, 0.0, 1e-4)
    cert = w1_distance(random_mixed(sh, rng), ctx.omega.state, tol=tol)
    T.values.update(random_vs_gibbs_lower=cert.value_lower, random_vs_gibbs_upper=cert.value_upper)
    T.check("bracket_ordered", cert.value_lower, cert.value_upper, 1e-12)


def _task_lipschitz(ctx: _Context, T: _Task):
    br = lip_const(ctx.H.op())
    T.values.update(lower=br.lower, upper=br.upper)
    T.check("bracket_ordered", br.lower, br.upper, 1e-12)
    # triangle inequality over terms: ||h_A||_L <= 2 ||h_A||
    per = {v: 0.0 for v in ctx.shape.sites}
    for s, h in ctx.H.terms:
        for v in s:
            per[v] += 2 * op_norm(h.mat)
    T.check("upper_within_term_sum", br.lower, max(per.values(), default=0.0), 1e-9)


def _task_recovery(ctx: _Context, T: _Task):
    sh = ctx.shape
    if sh.n < 2:
        T.notes.append("recovery needs at least two sites")
        return
    A, B = list(sh.sites[:-1]), [sh.sites[-1]]
    st = ctx.omega.state
    phi = petz_rotated(st, A, B, ctx.tol["quadrature"])
    fp = trace_norm(phi.apply_array(marginal(st, A).mat) - st.mat)
    neg, tp = phi.cptp_defect()
    T.values.update(fixed_point_error=fp, choi_negativity=neg, trace_error=tp, clipped=phi.clipped)
    T.check("fixed_point", fp, 0.0, 1e-7)
    rng = ctx.rng("recovery")
    worst = -math.inf
    for _ in range(ctx.cfg.trials):
        rho = random_mixed(sh, rng)
        drop, rhs = recoverability_gap(rho, st, A, B, ctx.tol["quadrature"])
        worst = max(worst, rhs - drop)
    T.check("recoverability", worst, 0.0, 1e-6)
    P = ctx.partition
    w1 = w2 = -math.inf
    for _ in range(ctx.cfg.trials):
        cb = chain_recovery_bounds(random_mixed(sh, rng), st, P.blocks, ctx.tol["quadrature"])
        w1 = max(w1, cb.bound1 - cb.S)
        w2 = max(w2, cb.bound2 - (1 - math.exp(-cb.S / cb.m)))
    T.check("chain_squared_sum", w1, 0.0, 1e-6)
    T.check("chain_exponential_form", w2, 0.0, 1e-6)


def _task_dobrushin(ctx: _Context, T: _Task):
    P = ctx.partition
    eta = ctx.markov()
    if isinstance(eta, Exception):
        T.notes.append(f"Markov condition fails: {eta}")
        return
    emp = dob.eta_empirical(ctx.omega, P, trials=ctx.cfg.trials, seed=ctx.seed_for("dobrushin"),
                            tol=ctx.tol["quadrature"])
    md = dob.eta_from_maxdiv(ctx.omega, P)
    T.values.update(eta_diamond=eta.eta, eta_diamond_lower=eta.lower, eta_empirical=emp.eta,
                    maxdiv_a=md.a, maxdiv_applicable=md.applicable)
    T.check("empirical_below_diamond", emp.eta, eta.eta, 1e-6)
    T.check("eta_below_one", eta.eta, 1.0, -1e-12)
    if md.applicable:
        T.values["eta_maxdiv"] = md.eta
        T.check("empirical_below_maxdiv", emp.eta, md.eta, 1e-6)
    if eta.eta < 1:
        C = dob.tci_markov_bound(P, eta.eta)
        rep = dob.verify_tci_empirical(ctx.omega, C, ctx.cfg.trials, ctx.seed_for("tci") + 1,
                                       ctx.tol["slack"], ctx.workers, ctx.tol["w1"], {"markov": C})
        T.values.update(markov_constant=C, max_ratio_upper=rep.empirical_max_ratio_upper,
                        max_ratio_lower=rep.empirical_max_ratio_lower)
        T.check("markov_constant_empirical", rep.empirical_max_ratio_upper, C, ctx.tol["slack"])


def _task_curvature(ctx: _Context, T: _Task):
    H = ctx.H
    N, d = H.max_neighborhood(), ctx.shape.d
    if N >= 2 and H.max_term_norm() > 0:
        bc = curv.beta_critical(N, d, H.max_term_norm())
        T.values["beta_c"] = bc.beta_c
    ce = ctx.contraction()
    if ce is None:
        T.notes.append("Hamiltonian is not commuting; curvature bound does not apply")
        return
    T.values.update(contraction_upper=ce.upper, contraction_lower=ce.lower, kappa=ce.kappa,
                    N=ce.N, diamond_upper={str(k): v for k, v in ce.per_site_diamond.items()},
                    loose=ce.loose)
    T.check("contraction_bracket_ordered", ce.lower, ce.upper, 1e-7)
    if ctx.beta == 0.0:
        n = ctx.shape.n
        T.check("infinite_temperature_upper", abs(ce.upper - (1 - 1 / n)), 0.0, 1e-6)
    if ce.kappa > 0:
        C = curv.tci_curvature_bound(ctx.shape.n, ce.N, ce.kappa)
        rep = dob.verify_tci_empirical(ctx.omega, C, ctx.cfg.trials, ctx.seed_for("curvature") + 1,
                                       ctx.tol["slack"], ctx.workers, ctx.tol["w1"], {"curvature": C})
        T.values.update(curvature_constant=C, max_ratio_upper=rep.empirical_max_ratio_upper,
                        max_ratio_lower=rep.empirical_max_ratio_lower)
        T.check("curvature_constant_empirical", rep.empirical_max_ratio_upper, C, ctx.tol["slack"])
    else:
        T.notes.append("contraction upper bound is not below 1; no curvature constant")


def _task_tci(ctx: _Context, T: _Task):
    bounds = ctx.certified_constants("curvature" in ctx.cfg.tasks)
    dual = conc.tci_dual_lower(ctx.omega, seed=ctx.seed_for("tci"))
    T.values.update(bounds=bounds, dual_lower=dual)
    for k, v in bounds.items():
        T.check(f"dual_below_{k}", dual, v, 1e-3)
    if not bounds:
        T.notes.append("no certified constant applies to this state")
        return
    best = min(bounds.values())
    rep = dob.verify_tci_empirical(ctx.omega, best, ctx.cfg.trials, ctx.seed_for("tci"),
                                   ctx.tol["slack"], ctx.workers, ctx.tol["w1"], bounds)
    T.values.update(tested=best, max_ratio_upper=rep.empirical_max_ratio_upper,
                    max_ratio_lower=rep.empirical_max_ratio_lower, refuted=rep.refuted)
    T.check("best_constant_empirical", rep.empirical_max_ratio_upper, best, ctx.tol["slack"])
    T.check("no_dual_refutation", rep.empirical_max_ratio_lower, best, ctx.tol["slack"])


def _local_z(d):
    return np.diag(np.arange(d, dtype=float) - (d - 1) / 2) * (2.0 / max(d - 1, 1))


def _task_concentration(ctx: _Context, T: _Task):
    bounds = ctx.certified_constants("curvature" in ctx.cfg.tasks)
    if not bounds:
        T.notes.append("no certified constant applies to this state")
        return
    c = min(bounds.values())
    sh, d, n = ctx.shape, ctx.shape.d, ctx.shape.n
    z = _local_z(d)
    obs = {f"z_{s}": embed_array(z, d, n, [k]) for k, s in enumerate(sh.sites)}
    obs["z_sum"] = sum(obs[f"z_{s}"] for s in sh.sites)
    rng = ctx.rng("concentration")
    obs["random_diagonal"] = np.diag(rng.normal(size=sh.dim))
    T.values["constant"] = c
    for name, O in obs.items():
        op = HermitianOp(sh, O)
        w = np.linalg.eigvalsh(O)
        grid = np.linspace(0.0, w[-1] - w[0], 20)
        rep = conc.tail_report(op, ctx.omega, c, grid)
        gap = [b - e for b, e in zip(rep.gauss_bound, rep.exact_tail)]
        k = int(np.argmin(gap))
        T.check(f"tail_{name}", rep.exact_tail[k], rep.gauss_bound[k], 0.0)
        T.values[f"tail_{name}_commuting"] = rep.commuting
    K = obs["z_sum"] * 0.5
    K = K - np.real(np.vdot(ctx.omega.mat, K)) * np.eye(sh.dim)
    if np.max(np.abs(K @ ctx.omega.mat - ctx.omega.mat @ K)) <= 1e-10:
        lhs, rhs = conc.laplace_bound_check(HermitianOp(sh, K), ctx.omega, c)
        T.check("laplace_z_sum", lhs, rhs, 1e-12)


def _task_ensembles(ctx: _Context, T: _Task):
    H, om, sh = ctx.H, ctx.omega, ctx.shape
    n = sh.n
    bounds = ctx.certified_constants("curvature" in ctx.cfg.tasks)
    rng = ctx.rng("ensembles")
    worst = -math.inf
    for _ in range(ctx.cfg.trials):
        a, b = random_mixed(sh, rng), random_mixed(sh, rng)
        cert = w1_distance(a, b, tol=ctx.tol["w1"])
        lhs, rhs = entropy_continuity_gap(a, b, cert.value_upper)
        worst = max(worst, lhs - rhs)
    T.check("entropy_continuity", worst, 0.0, 1e-9)
    if not bounds:
        T.notes.append("no certified constant applies; equivalence bounds skipped")
        return
    C = min(bounds.values()) / n
    T.values["per_site_constant"] = C
    w = np.linalg.eigvalsh(H.matrix())
    spread = float(w[-1] - w[0])
    lip = lip_const(H.op()).upper
    for Delta in [s * max(spread, 1.0) for s in (0.125, 0.25, 0.5, 1.0, 2.0)]:
        E = conc.argmax_shell_energy(H, ctx.beta, Delta)
        mc = microcanonical(H, E, Delta)
        exact = rel_entropy(mc, om)
        bnd = conc.microcanonical_equivalence_bound(om, Delta, C, E=E, lip=lip)
        T.check(f"microcanonical_delta_{Delta:.6g}", exact, bnd, 1e-9)
    # energy-matched state: mix the shells below and above the Gibbs energy
    e0 = energy(om.state, H)
    below, above = w[w <= e0], w[w > e0]
    if below.size and above.size and spread > 0:
        low = microcanonical(H, e0, e0 - w[0] + 1.0)
        high = microcanonical(H, w[-1], w[-1] - e0)
        rho = energy_matched_mixture(low, high, H, e0)
        b_w1, b_marg, _ = conc.ensemble_equivalence(rho, om, C)
        cert = w1_distance(rho, om.state, tol=ctx.tol["w1"])
        lam = trace_norm(conc.average_marginal(rho) - conc.average_marginal(om))
        T.check("equivalence_w1_per_site", cert.value_upper / n, b_w1, ctx.tol["slack"])
        T.check("equivalence_average_marginal", lam, b_marg, 1e-9)
        T.check("entropy_lower_bound", conc.entropy_w1_lower(rho, om), cert.value_upper, 1e-9)


_RUNNERS = {
    "w1": _task_w1, "lipschitz": _task_lipschitz, "recovery": _task_recovery,
    "dobrushin": _task_dobrushin, "curvature": _task_curvature, "tci": _task_tci,
    "concentration": _task_concentration, "ensembles": _task_ensembles,
}


def _versions():
    out = {}
    for pkg in ("artifact", "numpy", "scipy", "cvxpy"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def run(cfg: ExperimentConfig, workers: int = 1, timings: bool = False) -> dict:
    """Run every task at every beta; task errors are recorded, not raised."""
    results = []
    for beta in cfg.betas:
        ctx = _Context(cfg, beta, workers)
        for name in cfg.tasks:
            T = _Task(name, beta)
            t0 = time.perf_counter()
            try:
                _RUNNERS[name](ctx, T)
            except Exception as e:  # a failing task must not stop the run
                T.notes.append(f"error: {type(e).__name__}: {e}")
                T.check("task_completed", 1.0, 0.0, 0.0)
            d = T.as_dict()
            if timings:
                d["seconds"] = time.perf_counter() - t0
            results.append(d)
    n_fail = sum(1 for r in results for a in r["assertions"] if not a["verdict"])
    n_all = sum(len(r["assertions"]) for r in results)
    return {"config": cfg.raw, "versions": _versions(), "results": results,
            "summary": {"assertions": n_all, "failed": n_fail, "passed": n_fail == 0}}


# ----------------------------------------------------------------------------
# output
# ----------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    s = "%.17g" % x
    if all(c in "-0123456789" for c in s):
        s += ".0"
    return s


def _dump(obj, indent=0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {_dump(obj[k], indent + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[\n" + ",\n".join(inner + _dump(v, indent + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit(report: dict, fmt: str = "json") -> bytes:
    """Serialize a report: sorted keys and 17 significant digits, or a CSV of assertions."""
    if fmt == "json":
        return (_dump(report) + "\n").encode()
    if fmt in ("csv", "csv-summary"):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "beta", "assertion", "lhs", "rhs", "slack", "verdict"])
        for r in report["results"]:
            for a in r["assertions"]:
                w.writerow([r["task"], "%.17g" % r["beta"], a["name"], "%.17g" % a["lhs"],
                            "%.17g" % a["rhs"], "%.17g" % a["slack"], "pass" if a["verdict"] else "fail"])
        return buf.getvalue().encode()
    raise ValueError(f"unknown format {fmt!r}")
