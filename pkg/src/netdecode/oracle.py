"""Ground-truth LP oracle: standard form, revised simplex, duals, active sets.

Standard form used throughout (all variables nonnegative)::

    columns  x (n) | sx (n) | u (m) | w (m)
    x  = generation,            sx = x_bar - x
    u  = K f + f_under  (>= 0), w  = f_bar - K f

    rows     nodal   (n):    x + A_tilde u_T            = load + A_tilde f_under_T
             cycle   (m-nf): u_e - K_e u_T              = f_under_e - K_e f_under_T
             gen box (n):    x + sx                     = x_bar
             edge box(m):    u + w                      = f_bar + f_under

``T`` are the fundamental edges (the spanning tree for DC-OPF, every edge for
network flow).  A zero-valued column is exactly a binding inequality, in the
order ``[x >= 0 | x <= x_bar | Kf >= -f_under | Kf <= f_bar]`` used for the
active-set bit vector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBasis, DimensionMismatch, Infeasible, TooLarge
from .network import FlowStructure, Kind, Network
from .simplex import ZERO_TOL, solve_lp, unit_columns

__all__ = [
    "StandardFormLP",
    "DualCertificate",
    "Basis",
    "OracleSolution",
    "SensitivityPolytope",
    "to_standard_form",
    "simplex_solve",
    "solve",
    "brute_force_solve",
    "sensitivity_polytope",
    "inequality_system",
    "nodal_status_from_active",
    "line_status_from_active",
]

FEAS_TOL = 1e-8


@dataclass
class StandardFormLP:
    M: np.ndarray
    b: np.ndarray
    c: np.ndarray
    network: Network
    structure: FlowStructure
    load: np.ndarray
    units: tuple = field(repr=False, default=None)

    @property
    def n(self):
        return self.network.n

    @property
    def m(self):
        return self.network.m

    @property
    def nf(self):
        return self.network.fundamental_count

    @property
    def shape(self):
        return self.M.shape

    def split(self, z):
        n, m = self.n, self.m
        return z[:n], z[n:2 * n], z[2 * n:2 * n + m], z[2 * n + m:]

    def map_back(self, z):
        """Standard-form point -> (x, fundamental flows, edge flows)."""
        x, _, u, _ = self.split(z)
        edge_flows = u - self.network.flow_cap_lower
        f = edge_flows[self.structure.fundamental_edges]
        return x.copy(), f, self.structure.cycle_map @ f


def _std_matrix(structure: FlowStructure):
    cached = structure._cache.get("std_matrix")
    if cached is not None:
        return cached
    net = structure.network
    n, m = net.n, net.m
    T = structure.fundamental_edges
    nf = T.size
    nontree = np.setdiff1d(np.arange(m), T)
    rows = n + nontree.size + n + m
    cols = 2 * n + 2 * m
    M = np.zeros((rows, cols))
    ux = slice(0, n)
    usx = slice(n, 2 * n)
    uu = 2 * n
    uw = 2 * n + m
    r = 0
    # nodal balance
    M[r:r + n, ux] = np.eye(n)
    M[r:r + n, uu + T] = structure.reduced_incidence
    r += n
    # cycle rows
    K_T = structure.cycle_map[nontree]          # (m-nf, nf)
    for i, e in enumerate(nontree):
        M[r + i, uu + e] = 1.0
        M[r + i, uu + T] -= K_T[i]
    r += nontree.size
    # generation box
    M[r:r + n, ux] = np.eye(n)
    M[r:r + n, usx] = np.eye(n)
    r += n
    # edge box
    M[r:r + m, uu:uu + m] = np.eye(m)
    M[r:r + m, uw:uw + m] = np.eye(m)

    keep = _independent_rows(M)
    M = np.ascontiguousarray(M[keep])
    fl = net.flow_cap_lower
    const = np.concatenate([
        structure.reduced_incidence @ fl[T],
        fl[nontree] - K_T @ fl[T],
        np.zeros(n),
        np.zeros(m),
    ])
    box = np.concatenate([
        np.zeros(n),
        np.zeros(nontree.size),
        net.gen_cap,
        net.flow_cap_upper + fl,
    ])
    cvec = np.zeros(cols)
    cvec[ux] = net.cost
    cached = {
        "M": M, "keep": keep, "const": const[keep], "box": box[keep], "c": cvec,
        "units": unit_columns(M), "nodal_rows": n, "row_count_full": rows,
    }
    structure._cache["std_matrix"] = cached
    return cached


def _independent_rows(M, tol=1e-10):
    """Indices of a maximal set of linearly independent rows (pivoted QR)."""
    from scipy.linalg import qr

    if np.linalg.matrix_rank(M) == M.shape[0]:
        return np.arange(M.shape[0])
    _, R, piv = qr(M.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * max(1.0, diag.max(initial=0.0))).sum())
    return np.sort(piv[:rank])


def to_standard_form(network: Network, structure: FlowStructure, load) -> StandardFormLP:
    load = np.asarray(load, dtype=float)
    if load.shape != (network.n,):
        raise DimensionMismatch(f"load has shape {load.shape}, network has {network.n} nodes")
    if not np.all(np.isfinite(load)):
        raise DimensionMismatch("load has non-finite entries")
    s = _std_matrix(structure)
    n = network.n
    rhs_load = np.zeros(s["row_count_full"])
    rhs_load[:n] = load
    b = s["const"] + s["box"] + rhs_load[s["keep"]]
    return StandardFormLP(M=s["M"], b=b, c=s["c"], network=network, structure=structure,
                          load=load, units=s["units"])


@dataclass
class DualCertificate:
    mu: np.ndarray
    lambda_upper: np.ndarray
    lambda_lower: np.ndarray
    nu_upper: np.ndarray
    nu_lower: np.ndarray
    upsilon: np.ndarray
    v: np.ndarray

    @classmethod
    def from_parts(cls, network, mu, lam_up, lam_lo, nu_up, nu_lo):
        fbar = network.flow_cap_upper
        return cls(mu=mu, lambda_upper=lam_up, lambda_lower=lam_lo, nu_upper=nu_up,
                   nu_lower=nu_lo, upsilon=fbar * lam_up - fbar * lam_lo, v=lam_up - lam_lo)

    def objective(self, network: Network, load) -> float:
        return float(self.mu @ load - self.lambda_lower @ network.flow_cap_lower
                     - self.lambda_upper @ network.flow_cap_upper - self.nu_upper @ network.gen_cap)

    def stationarity_residuals(self, network: Network, structure: FlowStructure):
        """Residuals of  c - mu - nu_lower + nu_upper = 0  and
        -A_tilde' mu - K' lambda_lower + K' lambda_upper = 0."""
        K = structure.cycle_map
        r_gen = network.cost - self.mu - self.nu_lower + self.nu_upper
        r_line = -structure.reduced_incidence.T @ self.mu + K.T @ (self.lambda_upper - self.lambda_lower)
        return r_gen, r_line


@dataclass
class Basis:
    columns: np.ndarray
    Binv: np.ndarray
    b_std: np.ndarray


@dataclass
class OracleSolution:
    x: np.ndarray
    f: np.ndarray
    edge_flows: np.ndarray
    objective: float
    duals: DualCertificate
    active_set: np.ndarray         # bool, length 2n + 2m
    degenerate: bool               # primal degeneracy (zero basic value / wrong count)
    alternative_optima: bool       # dual degeneracy (zero reduced cost off the basis)
    basis: Basis | None = None
    core_time: float = 0.0
    pivots: int = 0

    @property
    def unique(self) -> bool:
        """Nondegenerate in the full sense: a single optimal vertex, unique duals."""
        return not (self.degenerate or self.alternative_optima)

    @property
    def active_count(self) -> int:
        return int(self.active_set.sum())

    def nodal_status(self):
        return nodal_status_from_active(self.active_set, self.x.size)

    def line_status(self):
        return line_status_from_active(self.active_set, self.x.size)


def nodal_status_from_active(active, n):
    """+1 at upper bound, -1 at zero, 0 interior (upper wins if both bind)."""
    active = np.asarray(active, dtype=bool)
    st = np.zeros(n, dtype=np.int8)
    st[active[:n]] = -1
    st[active[n:2 * n]] = 1
    return st


def line_status_from_active(active, n):
    active = np.asarray(active, dtype=bool)
    m = (active.size - 2 * n) // 2
    st = np.zeros(m, dtype=np.int8)
    st[active[2 * n:2 * n + m]] = -1
    st[active[2 * n + m:]] = 1
    return st


def simplex_solve(lp: StandardFormLP, **kwargs) -> OracleSolution:
    """Solve with the revised simplex and recover the full dual certificate."""
    res = solve_lp(lp.M, lp.b, lp.c, units=lp.units, **kwargs)
    net = lp.network
    n, m = net.n, net.m
    x, f, edge_flows = lp.map_back(res.z)
    d = res.reduced_costs
    dx, dsx, du, dw = lp.split(d)
    mu = res.y[:n].copy()
    duals = DualCertificate.from_parts(
        net, mu,
        lam_up=np.maximum(dw, 0.0), lam_lo=np.maximum(du, 0.0),
        nu_up=np.maximum(dsx, 0.0), nu_lo=np.maximum(dx, 0.0),
    )
    zscale = max(1.0, float(np.abs(lp.b).max(initial=0.0)))
    ztol = ZERO_TOL * zscale
    active = res.z <= ztol
    real = res.basis < lp.M.shape[1]
    basic_vals = res.z[res.basis[real]]
    degenerate = bool(np.any(basic_vals <= ztol)) or int(active.sum()) != net.active_budget
    nonbasic = np.ones(lp.M.shape[1], dtype=bool)
    nonbasic[res.basis[real]] = False
    dtol = ZERO_TOL * max(1.0, float(np.abs(lp.c).max(initial=0.0)))
    alt = bool(np.any(np.abs(d[nonbasic]) <= dtol))
    return OracleSolution(
        x=x, f=f, edge_flows=edge_flows, objective=res.objective, duals=duals,
        active_set=active, degenerate=degenerate, alternative_optima=alt,
        basis=Basis(columns=res.basis, Binv=res.Binv, b_std=lp.b.copy()),
        core_time=res.core_time, pivots=res.pivots,
    )


def solve(network: Network, structure: FlowStructure, load, **kwargs) -> OracleSolution:
    return simplex_solve(to_standard_form(network, structure, load), **kwargs)


# -- sensitivity polytopes -------------------------------------------------------

@dataclass
class SensitivityPolytope:
    """Right-hand-side perturbations that keep a basis optimal: B^-1 (b + delta) >= -tol."""

    Binv: np.ndarray
    b_std: np.ndarray
    columns: np.ndarray | None = None
    tol: float = ZERO_TOL

    def basic_values(self, delta=None):
        rhs = self.b_std if delta is None else self.b_std + delta
        return self.Binv @ rhs

    def contains(self, delta) -> bool:
        return bool(np.all(self.basic_values(delta) >= -self.tol))

    def boundary(self, direction, t_max=1e6, iters=200):
        """Largest t with contains(t * direction), by bisection (inf if unbounded)."""
        if not self.contains(t_max * np.asarray(direction)):
            lo, hi = 0.0, t_max
            if not self.contains(0.0 * direction):
                return 0.0
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if self.contains(mid * direction):
                    lo = mid
                else:
                    hi = mid
            return lo
        return np.inf


def sensitivity_polytope(sol: OracleSolution) -> SensitivityPolytope:
    if sol.basis is None:
        raise DegenerateBasis("solution carries no basis")
    if sol.degenerate:
        raise DegenerateBasis("basis is primal degenerate")
    return SensitivityPolytope(Binv=sol.basis.Binv, b_std=sol.basis.b_std, columns=sol.basis.columns)


# -- brute force -------------------------------------------------------------------

def inequality_system(network: Network, structure: FlowStructure):
    """All inequalities as ``G z <= h`` over z = (x, f), in active-set order."""
    n, m = network.n, network.m
    nf = network.fundamental_count
    K = structure.cycle_map
    G = np.zeros((2 * n + 2 * m, n + nf))
    h = np.zeros(2 * n + 2 * m)
    G[:n, :n] = -np.eye(n)
    G[n:2 * n, :n] = np.eye(n)
    h[n:2 * n] = network.gen_cap
    G[2 * n:2 * n + m, n:] = -K
    h[2 * n:2 * n + m] = network.flow_cap_lower
    G[2 * n + m:, n:] = K
    h[2 * n + m:] = network.flow_cap_upper
    return G, h


def brute_force_solve(network: Network, structure: FlowStructure, load, max_vars=12) -> OracleSolution:
    """Enumerate every choice of p - n binding inequalities; keep the cheapest feasible vertex."""
    load = np.asarray(load, dtype=float)
    if load.shape != (network.n,):
        raise DimensionMismatch("load dimension does not match the network")
    n, m = network.n, network.m
    p = network.variable_count
    if p > max_vars:
        raise TooLarge(f"{p} variables exceeds the brute-force limit of {max_vars}")
    k = p - n
    G, h = inequality_system(network, structure)
    E = np.hstack([np.eye(n), structure.reduced_incidence])
    cz = np.concatenate([network.cost, np.zeros(p - n)])
    partner = np.concatenate([np.arange(n, 2 * n), np.arange(n), np.arange(2 * n + m, 2 * n + 2 * m),
                              np.arange(2 * n, 2 * n + m)])
    combos = np.array(list(itertools.combinations(range(G.shape[0]), k)), dtype=np.int64).reshape(-1, k)
    if k > 0:
        clash = np.zeros(len(combos), dtype=bool)
        for j in range(k):
            clash |= (combos == partner[combos[:, j]][:, None]).any(axis=1)
        combos = combos[~clash]
    N = len(combos)
    S = np.empty((N, p, p))
    S[:, :n, :] = E
    S[:, n:, :] = G[combos]
    R = np.empty((N, p))
    R[:, :n] = load
    R[:, n:] = h[combos]
    rn = S / np.linalg.norm(S, axis=2, keepdims=True)
    ok = np.abs(np.linalg.det(rn)) > 1e-9
    S, R, combos = S[ok], R[ok], combos[ok]
    if len(S) == 0:
        raise Infeasible("no nonsingular active set")
    Z = np.linalg.solve(S, R[..., None])[..., 0]
    scale = max(1.0, float(np.abs(h).max()), float(np.abs(load).max()))
    feas = np.all(Z @ G.T <= h + FEAS_TOL * scale, axis=1)
    if not feas.any():
        raise Infeasible("no enumerated vertex is feasible")
    Z, combos = Z[feas], combos[feas]
    costs = Z @ cz
    best = int(np.argmin(costs))
    z = Z[best]
    J = float(costs[best])
    near = np.abs(costs - J) <= 1e-9 * max(1.0, abs(J))
    distinct = np.abs(Z[near] - z).max(axis=1) > 1e-7
    alt = bool(distinct.any())

    slack = h - G @ z
    active = slack <= FEAS_TOL * scale
    degenerate = int(active.sum()) != k
    # stationarity: E' mu - G_S' eta = c_z
    S_idx = combos[best]
    Msys = np.hstack([E.T, -G[S_idx].T])
    sol = np.linalg.solve(Msys, cz)
    mu = sol[:n]
    eta = np.zeros(G.shape[0])
    eta[S_idx] = sol[n:]
    duals = DualCertificate.from_parts(
        network, mu,
        lam_up=eta[2 * n + m:], lam_lo=eta[2 * n:2 * n + m],
        nu_up=eta[n:2 * n], nu_lo=eta[:n],
    )
    x = z[:n].copy()
    f = z[n:].copy()
    return OracleSolution(
        x=x, f=f, edge_flows=structure.cycle_map @ f, objective=J, duals=duals,
        active_set=active, degenerate=degenerate, alternative_optima=alt,
    )
