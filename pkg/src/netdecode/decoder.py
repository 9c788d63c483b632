"""Neural decoding of the active set: nodal statuses from the dual estimate,
line statuses from the line-dual problem, then one linear solve.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from . import _kernels
from .errors import (
    BudgetExhausted,
    DecodeFailure,
    DegenerateBasis,
    DimensionMismatch,
    InvalidParam,
    NetworkHashMismatch,
    NotConverged,
    ParseError,
    SchemaMismatch,
    SingularSystem,
)
from .network import FlowStructure, Kind, Network
from .simplex import ZERO_TOL, solve_lp

DICT_SCHEMA_VERSION = 1


class NodeStatus(IntEnum):
    AT_ZERO = -1
    INTERIOR = 0
    AT_UPPER = 1


class LineStatus(IntEnum):
    AT_LOWER = -1
    INTERIOR = 0
    AT_UPPER = 1


class Provenance(str, Enum):
    DICTIONARY = "dictionary"
    IHT = "iht"
    L1 = "l1"
    INSPECTION = "inspection"
    EXTERNAL = "external"


@dataclass
class DecodeConfig:
    epsilon: float = 0.05
    iht_max_iters: int = 500
    iht_step: float = 0.0            # 0 => 1 / sigma_max(K_hat)^2
    iht_residual_tol: float = 1e-9
    dictionary_enabled: bool = False
    l1_fallback: bool = True
    enforce_budget: bool = True
    repair_rounds: int = 8
    resolve_conflicts: bool = False  # trim/drop low-confidence pins instead of failing

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidParam("epsilon must be > 0")
        if self.iht_max_iters < 1:
            raise InvalidParam("iht_max_iters must be >= 1")
        if self.iht_step < 0:
            raise InvalidParam("iht_step must be >= 0")


@dataclass
class DecodedActiveSet:
    nodal_status: np.ndarray        # int8 per node
    line_status: np.ndarray         # int8 per edge
    budget: int
    provenance: Provenance = Provenance.EXTERNAL

    @property
    def used(self) -> int:
        return int(np.count_nonzero(self.nodal_status) + np.count_nonzero(self.line_status))

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def to_bits(self) -> np.ndarray:
        """Bit vector in the order [x >= 0 | x <= x_bar | Kf >= -f_under | Kf <= f_bar]."""
        ns, ls = self.nodal_status, self.line_status
        return np.concatenate([ns < 0, ns > 0, ls < 0, ls > 0])

    @classmethod
    def from_bits(cls, bits, n, budget=None, provenance=Provenance.EXTERNAL):
        bits = np.asarray(bits, dtype=bool)
        m = (bits.size - 2 * n) // 2
        ns = np.zeros(n, dtype=np.int8)
        ns[bits[:n]] = -1
        ns[bits[n:2 * n]] = 1
        ls = np.zeros(m, dtype=np.int8)
        ls[bits[2 * n:2 * n + m]] = -1
        ls[bits[2 * n + m:]] = 1
        if budget is None:
            budget = int(bits.sum())
        return cls(ns, ls, budget, provenance)


@dataclass
class DecodedSolution:
    x: np.ndarray
    f: np.ndarray
    edge_flows: np.ndarray
    objective: float
    active: DecodedActiveSet
    residual: float
    completed: int = 0               # constraints added by the min-norm repair
    timings: dict = field(default_factory=dict)

    @property
    def core_time(self) -> float:
        return float(sum(self.timings.get(k, 0.0) for k in ("gradient", "nodal", "lines", "solve")))


# -- nodal stage ---------------------------------------------------------------

def decode_nodal(mu_hat, c, eps, budget=None):
    """Statuses from the gap mu_hat - c with an eps dead-band; returns (statuses, remaining budget)."""
    mu_hat = np.asarray(mu_hat, dtype=float)
    c = np.asarray(c, dtype=float)
    if mu_hat.shape != c.shape:
        raise DimensionMismatch("mu_hat and c differ in length")
    if not eps > 0:
        raise InvalidParam("eps must be > 0")
    st = _kernels.decode_nodal(mu_hat, c, float(eps))
    used = int(np.count_nonzero(st))
    if budget is None:
        return st, None
    if used > budget:
        raise BudgetExhausted(f"{used} binding nodes exceed the budget of {budget}")
    return st, budget - used


# -- line stage ----------------------------------------------------------------

def spectral_step(Khat, iters=30):
    """1 / sigma_max(Khat)^2 from a fixed-start power iteration."""
    Khat = np.asarray(Khat, dtype=float)
    if Khat.size == 0:
        return 1.0
    v = np.ones(Khat.shape[1]) / np.sqrt(Khat.shape[1])
    s = 0.0
    for _ in range(iters):
        w = Khat.T @ (Khat @ v)
        s = np.linalg.norm(w)
        if s == 0:
            return 1.0
        v = w / s
    # s approximates sigma_max^2; guard against under-estimation
    return 1.0 / (1.01 * s)


def iht_solve(Khat, rhs, k, config: DecodeConfig | None = None, step=None, normalize=True):
    """Sparse solve of Khat' u = rhs with |supp(u)| <= k; raises NotConverged.

    With ``normalize`` the rows of ``Khat`` (one per edge) are scaled to unit
    norm before iterating and the result is mapped back; thresholding then
    compares edges on an equal footing.  After the thresholded iteration stops
    the support is debiased by least squares, which turns a correct support
    into an exact solution.  The iteration runs from zero and from the
    thresholded minimum-norm solution; among exact results the smaller l1
    norm wins.  ``step`` refers to the (normalized) matrix.
    """
    config = config or DecodeConfig()
    Khat = np.ascontiguousarray(Khat, dtype=float)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if rhs.shape != (Khat.shape[1],):
        raise DimensionMismatch("rhs length does not match Khat")
    if k < 0:
        raise InvalidParam("sparsity must be >= 0")
    scale = np.ones(Khat.shape[0])
    if normalize and Khat.size:
        scale = np.linalg.norm(Khat, axis=1)
        scale[scale == 0] = 1.0
    Kn = np.ascontiguousarray(Khat / scale[:, None])
    if step is None:
        step = config.iht_step if config.iht_step > 0 else spectral_step(Kn)
    tol = config.iht_residual_tol * max(1.0, float(np.abs(rhs).max(initial=0.0)))
    limit = tol * np.sqrt(max(1, rhs.size))
    # two starts: zero, and the thresholded minimum-norm solution
    starts = [None]
    if k > 0 and Khat.size:
        ls, *_ = np.linalg.lstsq(Khat.T, rhs, rcond=None)
        starts.append(_kernels.hard_threshold(ls * scale, int(k)))
    best = None
    worst = None
    for u0 in starts:
        w, _, _ = _kernels.iht(Kn, rhs, int(k), float(step), int(config.iht_max_iters), tol, u0)
        u = _debias(Khat, rhs, w / scale)
        rnorm = float(np.linalg.norm(rhs - Khat.T @ u))
        if rnorm <= limit:
            l1 = float(np.abs(u).sum())
            if best is None or l1 < best[1] - 1e-12:
                best = (u, l1)
        elif worst is None or rnorm < worst[1]:
            worst = (u, rnorm)
    if best is None:
        raise NotConverged("IHT did not reach the residual tolerance", residual=worst[1], solution=worst[0])
    return best[0]


def _debias(Khat, rhs, u):
    supp = np.flatnonzero(u)
    if supp.size == 0:
        return u
    sol, *_ = np.linalg.lstsq(Khat[supp].T, rhs, rcond=None)
    out = np.zeros_like(u)
    out[supp] = sol
    return out


def decode_lines_by_inspection(rhs, f_bar, eps):
    """K = I case: upsilon = f_bar * rhs; |rhs_e| <= eps is Interior."""
    rhs = np.asarray(rhs, dtype=float)
    ups = np.asarray(f_bar, dtype=float) * rhs
    st = np.zeros(rhs.size, dtype=np.int8)
    st[rhs > eps] = LineStatus.AT_UPPER
    st[rhs < -eps] = LineStatus.AT_LOWER
    return st, ups


def line_dual_lp(structure: FlowStructure):
    """Standard form of min f_bar' lam_up + f_under' lam_lo  s.t. K'(lam_up - lam_lo) = r."""
    cached = structure._cache.get("line_dual")
    if cached is None:
        K = structure.cycle_map
        net = structure.network
        M = np.ascontiguousarray(np.hstack([K.T, -K.T]))
        c = np.concatenate([net.flow_cap_upper, net.flow_cap_lower])
        cached = (M, c)
        structure._cache["line_dual"] = cached
    return cached


def l1_line_duals(structure: FlowStructure, rhs):
    """Exact line duals through the simplex oracle.  Returns (upsilon, lam_up, lam_lo, LPResult)."""
    M, c = line_dual_lp(structure)
    m = structure.network.m
    res = solve_lp(M, rhs, c)
    lam_up = res.z[:m]
    lam_lo = res.z[m:]
    fbar = structure.network.flow_cap_upper
    return fbar * lam_up - fbar * lam_lo, lam_up, lam_lo, res


def statuses_from_upsilon(ups, tol=1e-9):
    st = np.zeros(ups.size, dtype=np.int8)
    scale = tol * max(1.0, float(np.abs(ups).max(initial=0.0)))
    st[ups > scale] = LineStatus.AT_UPPER
    st[ups < -scale] = LineStatus.AT_LOWER
    return st


# -- dictionary ----------------------------------------------------------------

@dataclass
class DictionaryEntry:
    codeword: np.ndarray
    columns: np.ndarray
    Binv: np.ndarray
    line_status: np.ndarray
    lambda_upper: np.ndarray
    lambda_lower: np.ndarray

    def contains(self, delta, tol=ZERO_TOL) -> bool:
        return bool(np.all(self.Binv @ (self.codeword + delta) >= -tol))


@dataclass
class Dictionary:
    network_hash: str
    entries: list = field(default_factory=list)
    skipped: dict = field(default_factory=lambda: {"duplicate": 0, "shadowed": 0, "degenerate": 0})

    def __len__(self):
        return len(self.entries)


def _entry_from_codeword(structure, r):
    ups, lam_up, lam_lo, res = l1_line_duals(structure, r)
    if np.any(res.basis >= 2 * structure.network.m):
        raise DegenerateBasis("artificial variable left in the line-dual basis")
    return DictionaryEntry(codeword=np.asarray(r, dtype=float).copy(), columns=res.basis.copy(),
                           Binv=res.Binv, line_status=statuses_from_upsilon(ups),
                           lambda_upper=lam_up, lambda_lower=lam_lo)


def dictionary_build(network: Network, structure: FlowStructure, mus) -> Dictionary:
    """One entry per distinct codeword A_tilde' mu.

    An entry whose line-dual basis and statuses both repeat an earlier entry
    can never change a first-hit lookup; it is pruned and counted as shadowed.
    """
    d = Dictionary(network_hash=network.content_hash())
    seen_bases = set()
    At = structure.reduced_incidence.T
    for mu in mus:
        r = At @ np.asarray(mu, dtype=float)
        if any(np.abs(e.codeword - r).max() <= 1e-9 for e in d.entries):
            d.skipped["duplicate"] += 1
            continue
        try:
            entry = _entry_from_codeword(structure, r)
        except DegenerateBasis:
            d.skipped["degenerate"] += 1
            continue
        key = (tuple(sorted(entry.columns.tolist())), entry.line_status.tobytes())
        if key in seen_bases:
            d.skipped["shadowed"] += 1
            continue
        seen_bases.add(key)
        d.entries.append(entry)
    return d


def dictionary_lookup(dictionary: Dictionary | None, structure: FlowStructure, mu_hat):
    """Stored line statuses of the entry whose polytope contains A_tilde' mu_hat - codeword.

    Degenerate entries have overlapping polytopes (cones through their
    codewords), so among all containing entries the one with the nearest
    codeword wins; without overlap this is the unique hit.  Returns
    (statuses, entry index) or None on a miss.
    """
    if dictionary is None or not dictionary.entries:
        return None
    r = structure.reduced_incidence.T @ np.asarray(mu_hat, dtype=float)
    best = None
    for k, e in enumerate(dictionary.entries):
        delta = r - e.codeword
        if e.contains(delta):
            dist = float(np.linalg.norm(delta))
            if best is None or dist < best[0]:
                best = (dist, k)
    if best is None:
        return None
    return dictionary.entries[best[1]].line_status.copy(), best[1]


def save_dictionary(dictionary: Dictionary, path):
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema_version": DICT_SCHEMA_VERSION, "network_hash": dictionary.network_hash,
                             "count": len(dictionary.entries), "skipped": dictionary.skipped}) + "\n")
        for e in dictionary.entries:
            fh.write(json.dumps({
                "codeword": e.codeword.tolist(), "columns": e.columns.tolist(),
                "line_status": e.line_status.tolist(), "lambda_upper": e.lambda_upper.tolist(),
                "lambda_lower": e.lambda_lower.tolist(),
            }) + "\n")


def load_dictionary(path, network: Network, structure: FlowStructure) -> Dictionary:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ParseError("empty dictionary file", line=1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=1) from None
    if header.get("schema_version") != DICT_SCHEMA_VERSION:
        raise SchemaMismatch("unsupported dictionary schema")
    if header.get("network_hash") != network.content_hash():
        raise NetworkHashMismatch("dictionary was built for a different network")
    M, _ = line_dual_lp(structure)
    d = Dictionary(network_hash=header["network_hash"], skipped=header.get("skipped", {}))
    for i, line in enumerate(lines[1:], start=2):
        try:
            row = json.loads(line)
            cols = np.asarray(row["columns"], dtype=np.int64)
            d.entries.append(DictionaryEntry(
                codeword=np.asarray(row["codeword"], dtype=float), columns=cols,
                Binv=np.linalg.inv(M[:, cols]), line_status=np.asarray(row["line_status"], dtype=np.int8),
                lambda_upper=np.asarray(row["lambda_upper"], dtype=float),
                lambda_lower=np.asarray(row["lambda_lower"], dtype=float)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"malformed dictionary entry: {exc}", line=i) from None
    return d


# -- linear solve --------------------------------------------------------------

def _constraint_rows(network, structure, active: DecodedActiveSet):
    n = network.n
    nf = network.fundamental_count
    p = n + nf
    rows, rhs = [], []
    for i in np.flatnonzero(active.nodal_status):
        r = np.zeros(p)
        r[i] = 1.0
        rows.append(r)
        rhs.append(network.gen_cap[i] if active.nodal_status[i] > 0 else 0.0)
    K = structure.cycle_map
    for e in np.flatnonzero(active.line_status):
        r = np.zeros(p)
        r[n:] = K[e]
        rows.append(r)
        rhs.append(network.flow_cap_upper[e] if active.line_status[e] > 0 else -network.flow_cap_lower[e])
    return (np.array(rows).reshape(-1, p), np.array(rhs, dtype=float))


def _variable_scales(network, structure):
    xs = np.where(network.gen_cap > 0, network.gen_cap, 1.0)
    fs = network.flow_cap_upper[structure.fundamental_edges]
    return np.concatenate([xs, fs])


def assemble_and_solve(network: Network, structure: FlowStructure, load, active: DecodedActiveSet,
                       completion=False) -> DecodedSolution:
    """Solve the conservation rows plus one equality per decoded active constraint.

    Constraints that pin a single variable are substituted out; the rest go
    through a dense LU with partial pivoting.  With ``completion`` an
    under-determined system gets the capacity-weighted minimum-norm solution
    instead of raising :class:`SingularSystem`.
    """
    t0 = time.perf_counter()
    load = np.asarray(load, dtype=float)
    n = network.n
    nf = network.fundamental_count
    if load.shape != (n,) or active.nodal_status.shape != (n,) or active.line_status.shape != (network.m,):
        raise DimensionMismatch("load or active set does not match the network")
    p = n + nf
    E = np.hstack([np.eye(n), structure.reduced_incidence])
    C, d = _constraint_rows(network, structure, active)
    z = np.zeros(p)
    fixed = np.zeros(p, dtype=bool)
    keep_rows = []
    for i in range(C.shape[0]):
        nz = np.flatnonzero(C[i])
        if nz.size == 1:
            j = nz[0]
            if fixed[j]:
                raise SingularSystem(f"variable {j} pinned by two active constraints")
            fixed[j] = True
            z[j] = d[i] / C[i, j]
        elif nz.size == 0:
            raise SingularSystem("empty constraint row")
        else:
            keep_rows.append(i)
    free = np.flatnonzero(~fixed)
    A = np.vstack([E, C[keep_rows]])[:, free]
    b = np.concatenate([load, d[keep_rows]]) - np.vstack([E, C[keep_rows]])[:, fixed] @ z[fixed]
    rows, cols = A.shape
    if rows > cols:
        raise SingularSystem(f"{rows} equations for {cols} free variables")
    if rows < cols:
        if not completion:
            raise SingularSystem(f"only {rows} equations for {cols} free variables")
        s = _variable_scales(network, structure)[free]
        y, *_ = np.linalg.lstsq(A * s, b, rcond=None)
        z[free] = s * y
    elif cols:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LinAlgWarning)  # singularity is checked below
            lu, piv = lu_factor(A, check_finite=False)
        diag = np.abs(np.diag(lu))
        if diag.min() <= 1e-11 * max(1.0, diag.max()):
            raise SingularSystem("active constraints are linearly dependent")
        z[free] = lu_solve((lu, piv), b, check_finite=False)
    x = z[:n]
    f = z[n:]
    resid = float(np.abs(x + structure.reduced_incidence @ f - load).max())
    return DecodedSolution(x=x, f=f, edge_flows=structure.cycle_map @ f, objective=float(network.cost @ x),
                           active=active, residual=resid, timings={"solve": time.perf_counter() - t0})


def solve_with_repair(network, structure, load, active: DecodedActiveSet, rounds=8) -> DecodedSolution:
    """Budget-driven completion when fewer than p - n constraints were decoded.

    Take the weighted minimum-norm point, pin the worst bound violators at the
    violated bound (up to the remaining budget), and solve again.
    """
    t0 = time.perf_counter()
    act = DecodedActiveSet(active.nodal_status.copy(), active.line_status.copy(), active.budget, active.provenance)
    added = 0
    sol = assemble_and_solve(network, structure, load, act, completion=act.remaining > 0)
    for _ in range(max(1, rounds) - 1):
        if act.remaining <= 0:
            break
        viol, kind, idx, sign = _violations(network, sol, act)
        if viol.size == 0:
            break
        trial = DecodedActiveSet(act.nodal_status.copy(), act.line_status.copy(), act.budget, act.provenance)
        picked = np.argsort(-viol, kind="stable")[:act.remaining]
        for o in picked:
            if kind[o] == 0:
                trial.nodal_status[idx[o]] = sign[o]
            else:
                trial.line_status[idx[o]] = sign[o]
        try:
            sol = assemble_and_solve(network, structure, load, trial, completion=trial.remaining > 0)
        except SingularSystem:
            break  # the pins conflict with what is already decoded; keep the last solution
        act = trial
        added += picked.size
    sol.completed = added
    sol.timings["solve"] = time.perf_counter() - t0
    return sol


def independent_subset(network, structure, active: DecodedActiveSet, node_score, line_score, rtol=1e-8):
    """Drop decoded constraints that are linearly dependent on the conservation
    rows and on more confident constraints (greedy, highest score first)."""
    n = network.n
    C, _ = _constraint_rows(network, structure, active)
    nodes = np.flatnonzero(active.nodal_status)
    edges = np.flatnonzero(active.line_status)
    score = np.concatenate([np.asarray(node_score, float)[nodes], np.asarray(line_score, float)[edges]])
    E = np.hstack([np.eye(n), structure.reduced_incidence])
    Q, _ = np.linalg.qr(E.T)
    basis = [Q[:, i] for i in range(Q.shape[1])]
    keep = np.zeros(len(score), dtype=bool)
    for i in np.argsort(-score, kind="stable"):
        r = C[i]
        res = r - np.column_stack(basis) @ (np.column_stack(basis).T @ r)
        nr = np.linalg.norm(res)
        if nr > rtol * np.linalg.norm(r):
            basis.append(res / nr)
            keep[i] = True
    ns = np.zeros_like(active.nodal_status)
    ls = np.zeros_like(active.line_status)
    ns[nodes[keep[:nodes.size]]] = active.nodal_status[nodes[keep[:nodes.size]]]
    ls[edges[keep[nodes.size:]]] = active.line_status[edges[keep[nodes.size:]]]
    return DecodedActiveSet(ns, ls, active.budget, active.provenance)


def _keep_top(status, score, k):
    out = np.zeros_like(status)
    idx = np.argsort(-np.where(status != 0, score, -np.inf), kind="stable")[:k]
    idx = idx[status[idx] != 0]
    out[idx] = status[idx]
    return out


def _violations(network, sol, act, tol=1e-9):
    x, fl = sol.x, sol.edge_flows
    xbar = network.gen_cap
    items = []
    free_n = act.nodal_status == 0
    lo = np.flatnonzero(free_n & (x < -tol))
    hi = np.flatnonzero(free_n & (x > xbar + tol))
    items += [(-x[i] / max(xbar[i], 1e-12), 0, i, -1) for i in lo]
    items += [((x[i] - xbar[i]) / max(xbar[i], 1e-12), 0, i, 1) for i in hi]
    free_e = act.line_status == 0
    fu, fd = network.flow_cap_upper, network.flow_cap_lower
    up = np.flatnonzero(free_e & (fl > fu + tol))
    dn = np.flatnonzero(free_e & (fl < -fd - tol))
    items += [((fl[e] - fu[e]) / fu[e], 1, e, 1) for e in up]
    items += [((-fd[e] - fl[e]) / fd[e], 1, e, -1) for e in dn]
    if not items:
        return np.empty(0), None, None, None
    v, k, i, s = (np.array(t) for t in zip(*items))
    return v, k, i, s


# -- full pipeline -------------------------------------------------------------

def decode_lines(network, structure, mu_hat, remaining, config: DecodeConfig, dictionary=None):
    """Line statuses from the dual estimate.

    Returns (statuses, provenance, score) where ``score`` is a per-edge
    confidence in cost units (the magnitude of the recovered line multiplier).
    """
    fbar = network.flow_cap_upper
    if config.dictionary_enabled and dictionary is not None:
        hit = dictionary_lookup(dictionary, structure, mu_hat)
        if hit is not None:
            return hit[0], Provenance.DICTIONARY, np.full(network.m, np.inf)
    rhs = structure.reduced_incidence.T @ mu_hat
    if network.kind is Kind.NETWORK_FLOW:
        st, _ = decode_lines_by_inspection(rhs, fbar, config.epsilon)
        used = np.count_nonzero(st)
        if config.enforce_budget and used > remaining:
            keep = np.argsort(-np.abs(rhs) * (st != 0), kind="stable")[:remaining]
            trimmed = np.zeros_like(st)
            trimmed[keep] = st[keep]
            st = trimmed
        return st, Provenance.INSPECTION, np.abs(rhs)
    Khat = structure.scaled_cycle_map
    step = structure._cache.get("iht_step")
    if step is None:
        scale = np.linalg.norm(Khat, axis=1)
        scale[scale == 0] = 1.0
        step = config.iht_step if config.iht_step > 0 else spectral_step(Khat / scale[:, None])
        structure._cache["iht_step"] = step
    try:
        ups = iht_solve(Khat, rhs, remaining, config, step=step)
        return statuses_from_upsilon(ups), Provenance.IHT, np.abs(ups) / fbar
    except NotConverged as exc:
        if not config.l1_fallback:
            raise
        fallback = exc.solution
    ups, *_ = l1_line_duals(structure, rhs)
    st = statuses_from_upsilon(ups)
    if config.enforce_budget:
        used = np.count_nonzero(st)
        if used > remaining:
            keep = np.argsort(-np.abs(ups), kind="stable")[:remaining]
            trimmed = np.zeros_like(st)
            trimmed[keep] = st[keep]
            st = trimmed
        elif used < remaining and fallback is not None:
            extra = [e for e in np.argsort(-np.abs(fallback), kind="stable") if st[e] == 0 and fallback[e] != 0]
            for e in extra[:remaining - used]:
                st[e] = LineStatus.AT_UPPER if fallback[e] > 0 else LineStatus.AT_LOWER
    score = np.abs(ups) / fbar
    if fallback is not None:
        score = np.maximum(score, np.abs(fallback) / fbar * (score == 0))
    return st, Provenance.L1, score


def decode(network: Network, structure: FlowStructure, load, mlp=None, config: DecodeConfig | None = None,
           dictionary: Dictionary | None = None, mu_hat=None) -> DecodedSolution:
    """Dual estimate -> nodal statuses -> line statuses -> linear solve.

    ``mu_hat`` bypasses the model (e.g. to inject true duals).  Stage errors
    surface as :class:`DecodeFailure`.
    """
    config = config or DecodeConfig()
    load = np.asarray(load, dtype=float)
    timings = {}
    t0 = time.perf_counter()
    if mu_hat is None:
        if mlp is None:
            raise InvalidParam("decode needs a model or an explicit mu_hat")
        mu_hat = mlp.input_gradient(load)
    mu_hat = np.asarray(mu_hat, dtype=float)
    t1 = time.perf_counter()
    timings["gradient"] = t1 - t0
    budget = network.active_budget
    try:
        nodal, _ = decode_nodal(mu_hat, network.cost, config.epsilon)
        node_score = np.abs(mu_hat - network.cost)
        used = int(np.count_nonzero(nodal))
        if config.enforce_budget and used > budget:
            if not config.resolve_conflicts:
                raise BudgetExhausted(f"{used} binding nodes exceed the budget of {budget}")
            nodal = _keep_top(nodal, node_score, budget)
        remaining = budget - int(np.count_nonzero(nodal))
        t2 = time.perf_counter()
        timings["nodal"] = t2 - t1
        lines, prov, line_score = decode_lines(network, structure, mu_hat, max(remaining, 0), config, dictionary)
        t3 = time.perf_counter()
        timings["lines"] = t3 - t2
        active = DecodedActiveSet(nodal, lines, budget, prov)
        try:
            if active.remaining > 0 and config.enforce_budget:
                sol = solve_with_repair(network, structure, load, active, config.repair_rounds)
            else:
                sol = assemble_and_solve(network, structure, load, active)
        except SingularSystem:
            if not config.resolve_conflicts:
                raise
            active = independent_subset(network, structure, active, node_score, line_score)
            sol = solve_with_repair(network, structure, load, active, config.repair_rounds)
    except (SingularSystem, BudgetExhausted, NotConverged, DegenerateBasis) as exc:
        raise DecodeFailure(f"decode failed: {exc}", cause=exc) from exc
    sol.timings.update(timings)
    sol.timings["wall"] = time.perf_counter() - t0
    return sol
