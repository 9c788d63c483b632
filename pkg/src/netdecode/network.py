"""Network-flow and DC-OPF problem structures.

A :class:`Network` holds the data of the LP

    min  c'x
    s.t. 0 <= x <= x_bar
         -f_under <= K f <= f_bar
         x + A K f = load

and :class:`FlowStructure` holds the matrices derived from its topology:
the incidence matrix ``A``, a BFS spanning tree, the cycle map ``K`` that
expands fundamental (tree) flows to all edge flows, ``A_tilde = A K`` and
``K_hat = diag(1/f_bar) K``.  For plain network flow ``K`` is the identity.

Sign convention: column ``e`` of ``A`` is -1 at the tail and +1 at the head,
so a positive flow leaves the tail and enters the head.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DisconnectedGraph, InvalidParam, ParseError, ValidationError

__all__ = [
    "Kind",
    "Network",
    "FlowStructure",
    "build_flow_structure",
    "random_connected_network",
    "load_network",
    "save_network",
    "embedded_case",
    "EMBEDDED_CASES",
]


class Kind(str, Enum):
    NETWORK_FLOW = "network_flow"
    DC_OPF = "dc_opf"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Network:
    node_count: int
    edges: np.ndarray            # (m, 2) int, 0-based (tail, head)
    cost: np.ndarray
    gen_cap: np.ndarray
    flow_cap_upper: np.ndarray
    flow_cap_lower: np.ndarray
    susceptance: np.ndarray
    kind: Kind
    nominal_load: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "edges", _frozen(self.edges, dtype=np.int64).reshape(-1, 2))
        for attr in ("cost", "gen_cap", "flow_cap_upper", "flow_cap_lower", "susceptance"):
            object.__setattr__(self, attr, _frozen(getattr(self, attr)))
        if self.nominal_load is not None:
            object.__setattr__(self, "nominal_load", _frozen(self.nominal_load))
        self.validate()

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n(self) -> int:
        return int(self.node_count)

    @property
    def m(self) -> int:
        return self.edge_count

    @property
    def fundamental_count(self) -> int:
        """Number of independent flow variables (n-1 for DC-OPF, m otherwise)."""
        return self.n - 1 if self.kind is Kind.DC_OPF else self.m

    @property
    def variable_count(self) -> int:
        return self.n + self.fundamental_count

    @property
    def inequality_count(self) -> int:
        return 2 * self.n + 2 * self.m

    @property
    def active_budget(self) -> int:
        """Active inequalities at a nondegenerate optimum: p - n."""
        return self.variable_count - self.n

    def validate(self):
        n, m = self.n, self.m
        if n < 2:
            raise ValidationError("node_count must be >= 2")
        if m < 1:
            raise ValidationError("network needs at least one edge")
        if self.edges.min() < 0 or self.edges.max() >= n:
            raise ValidationError("edge endpoint out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise ValidationError("self-loops are not allowed")
        for attr, size in (("cost", n), ("gen_cap", n), ("flow_cap_upper", m),
                           ("flow_cap_lower", m), ("susceptance", m)):
            arr = getattr(self, attr)
            if arr.shape != (size,):
                raise ValidationError(f"{attr} must have length {size}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{attr} has non-finite entries")
        if self.nominal_load is not None and self.nominal_load.shape != (n,):
            raise ValidationError(f"nominal_load must have length {n}")
        if np.any(self.cost < 0):
            raise ValidationError("costs must be nonnegative")
        if np.any(self.gen_cap < 0):
            raise ValidationError("generation capacities must be nonnegative")
        if np.any(self.flow_cap_upper <= 0) or np.any(self.flow_cap_lower <= 0):
            raise ValidationError("flow capacities must be strictly positive")
        if self.kind is Kind.DC_OPF:
            if np.any(self.susceptance <= 0):
                raise ValidationError("susceptances must be strictly positive for dc_opf")
            if not np.array_equal(self.flow_cap_lower, self.flow_cap_upper):
                raise ValidationError("dc_opf requires symmetric flow capacities (f_under == f_bar)")
        if not _is_connected(n, self.edges):
            raise ValidationError("graph is not connected")

    # -- serialization -----------------------------------------------------

    def to_case_dict(self) -> dict:
        edges = [
            [int(t) + 1, int(h) + 1, float(fu), float(fl), float(b)]
            for (t, h), fu, fl, b in zip(self.edges, self.flow_cap_upper,
                                         self.flow_cap_lower, self.susceptance)
        ]
        d = {
            "kind": self.kind.value,
            "nodes": self.n,
            "edges": edges,
            "cost": [float(v) for v in self.cost],
            "gen_cap": [float(v) for v in self.gen_cap],
        }
        if self.nominal_load is not None:
            d["nominal_load"] = [float(v) for v in self.nominal_load]
        if self.name:
            d["name"] = self.name
        return d

    def content_hash(self) -> str:
        d = self.to_case_dict()
        d.pop("name", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_case_dict(cls, d: dict, name: str = "") -> "Network":
        try:
            kind = Kind(d["kind"])
        except KeyError:
            raise ParseError("missing key", field="kind") from None
        except ValueError:
            raise ParseError(f"unknown kind {d['kind']!r}", field="kind") from None
        for key in ("nodes", "edges", "cost", "gen_cap"):
            if key not in d:
                raise ParseError("missing key", field=key)
        try:
            n = int(d["nodes"])
        except (TypeError, ValueError):
            raise ParseError("nodes must be an integer", field="nodes") from None
        rows = d["edges"]
        if not isinstance(rows, list):
            raise ParseError("edges must be a list", field="edges")
        edges, fu, fl, b = [], [], [], []
        for i, row in enumerate(rows):
            if not isinstance(row, (list, tuple)) or len(row) not in (4, 5):
                raise ParseError("edge rows are [tail, head, f_bar, f_under, b]", field=f"edges[{i}]")
            try:
                edges.append((int(row[0]) - 1, int(row[1]) - 1))
                fu.append(float(row[2]))
                fl.append(float(row[3]))
                b.append(float(row[4]) if len(row) == 5 else 1.0)
            except (TypeError, ValueError):
                raise ParseError("non-numeric edge entry", field=f"edges[{i}]") from None

        def vec(key, optional=False):
            if key not in d:
                if optional:
                    return None
                raise ParseError("missing key", field=key)
            try:
                return np.asarray(d[key], dtype=float)
            except (TypeError, ValueError):
                raise ParseError("non-numeric vector", field=key) from None

        return cls(
            node_count=n,
            edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
            cost=vec("cost"),
            gen_cap=vec("gen_cap"),
            flow_cap_upper=np.asarray(fu),
            flow_cap_lower=np.asarray(fl),
            susceptance=np.asarray(b),
            kind=kind,
            nominal_load=vec("nominal_load", optional=True),
            name=str(d.get("name", name)),
        )


def _is_connected(n, edges):
    adj = [[] for _ in range(n)]
    for t, h in edges:
        adj[t].append(h)
        adj[h].append(t)
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    stack = [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                stack.append(v)
    return bool(seen.all())


def load_network(path) -> Network:
    """Parse a JSON case file (1-based node indices)."""
    path = Path(path)
    text = path.read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno) from None
    if not isinstance(d, dict):
        raise ParseError("case file must hold a JSON object", line=1)
    return Network.from_case_dict(d, name=path.stem)


def save_network(network: Network, path):
    Path(path).write_text(json.dumps(network.to_case_dict(), indent=1) + "\n")


EMBEDDED_CASES = ("three_bus", "ieee14_analog", "ring6", "triangle_nf")


def embedded_case(name: str) -> Network:
    """Load one of the small cases shipped with the package."""
    if name not in EMBEDDED_CASES:
        raise InvalidParam(f"unknown embedded case {name!r}; choose from {EMBEDDED_CASES}")
    text = resources.files("netdecode.cases").joinpath(f"{name}.json").read_text()
    return Network.from_case_dict(json.loads(text), name=name)


# -- flow structure ------------------------------------------------------------

@dataclass(eq=False)
class FlowStructure:
    network: Network
    incidence: np.ndarray          # A, (n, m)
    spanning_tree: np.ndarray      # tree edge indices, ascending
    cycle_map: np.ndarray          # K, (m, nf)
    reduced_incidence: np.ndarray  # A_tilde = A K, (n, nf)
    scaled_cycle_map: np.ndarray   # K_hat = diag(1/f_bar) K
    fundamental_edges: np.ndarray  # edge index carried by each column of K
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kind(self) -> Kind:
        return self.network.kind

    def edge_flows(self, f):
        return self.cycle_map @ np.asarray(f, dtype=float)


def _bfs_tree(n, edges):
    """BFS from node 0; incident edges scanned in ascending index order."""
    adj = [[] for _ in range(n)]
    for e, (t, h) in enumerate(edges):
        adj[t].append(e)
        adj[h].append(e)
    parent_edge = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, -1, dtype=np.int64)
    depth[0] = 0
    queue = deque([0])
    tree = []
    while queue:
        u = queue.popleft()
        for e in adj[u]:
            t, h = edges[e]
            v = h if t == u else t
            if depth[v] < 0:
                depth[v] = depth[u] + 1
                parent_edge[v] = e
                tree.append(e)
                queue.append(v)
    if len(tree) != n - 1:
        raise DisconnectedGraph(f"spanning tree reached {len(tree) + 1} of {n} nodes")
    return np.array(sorted(tree), dtype=np.int64), parent_edge, depth


def _tree_path(a, b, edges, parent_edge, depth):
    """Tree edges on the path a -> b as (edge, +1 if traversed tail->head)."""
    up_a, up_b = [], []
    while depth[a] > depth[b]:
        e = parent_edge[a]
        up_a.append((e, a))
        a = _other(edges[e], a)
    while depth[b] > depth[a]:
        e = parent_edge[b]
        up_b.append((e, b))
        b = _other(edges[e], b)
    while a != b:
        e = parent_edge[a]
        up_a.append((e, a))
        a = _other(edges[e], a)
        e = parent_edge[b]
        up_b.append((e, b))
        b = _other(edges[e], b)
    path = []
    # walking up from the a side: step child -> parent
    for e, child in up_a:
        path.append((e, 1 if edges[e][0] == child else -1))
    # the b side is walked parent -> child
    for e, child in reversed(up_b):
        path.append((e, 1 if edges[e][1] == child else -1))
    return path


def _other(edge, u):
    t, h = edge
    return h if t == u else t


def build_flow_structure(network: Network) -> FlowStructure:
    n, m = network.n, network.m
    edges = network.edges
    A = np.zeros((n, m))
    A[edges[:, 0], np.arange(m)] = -1.0
    A[edges[:, 1], np.arange(m)] = 1.0
    tree, parent_edge, depth = _bfs_tree(n, edges)

    if network.kind is Kind.NETWORK_FLOW:
        K = np.eye(m)
        A_tilde = A.copy()
        fundamental = np.arange(m, dtype=np.int64)
    else:
        b = network.susceptance
        col_of = {int(e): j for j, e in enumerate(tree)}
        K = np.zeros((m, n - 1))
        for e in tree:
            K[e, col_of[int(e)]] = 1.0
        in_tree = np.zeros(m, dtype=bool)
        in_tree[tree] = True
        for e in np.flatnonzero(~in_tree):
            t, h = edges[e]
            # f_e = b_e (theta_t - theta_h), and each tree step u->v adds (theta_u - theta_v)
            for te, sign in _tree_path(t, h, edges, parent_edge, depth):
                K[e, col_of[int(te)]] += sign * b[e] / b[te]
        A_tilde = A @ K
        fundamental = tree.copy()

    K_hat = K / network.flow_cap_upper[:, None]
    return FlowStructure(
        network=network,
        incidence=A,
        spanning_tree=tree,
        cycle_map=K,
        reduced_incidence=A_tilde,
        scaled_cycle_map=K_hat,
        fundamental_edges=fundamental,
    )


def weighted_cycle_residuals(structure: FlowStructure, edge_flows) -> np.ndarray:
    """Susceptance-weighted flow sum around each fundamental cycle (zero under KVL)."""
    net = structure.network
    edges = net.edges
    tree, parent_edge, depth = _bfs_tree(net.n, edges)
    in_tree = np.zeros(net.m, dtype=bool)
    in_tree[tree] = True
    f = np.asarray(edge_flows, dtype=float)
    b = net.susceptance
    out = []
    for e in np.flatnonzero(~in_tree):
        t, h = edges[e]
        s = f[e] / b[e]
        for te, sign in _tree_path(t, h, edges, parent_edge, depth):
            s -= sign * f[te] / b[te]
        out.append(s)
    return np.asarray(out)


# -- random cases --------------------------------------------------------------

# Ranges used by random_connected_network.  Generator nodes are cheap and
# large; the remaining nodes carry small, expensive local capacity so every
# node keeps x_bar > 0 (a zero capacity makes both bounds bind at once).
RANDOM_DEFAULTS = {
    "generator_fraction": 0.3,
    "generator_cost": (1.0, 3.0),
    "local_cost": (3.0, 5.0),
    "generator_cap": (2.0, 5.0),
    "local_cap": (0.05, 0.4),
    "load": (0.2, 1.0),
    "flow_cap": (0.3, 1.5),
    "reverse_cap_ratio": (0.8, 1.2),
    "susceptance": (1.0, 10.0),
    "feasibility_headroom": 1.3,
}


def random_connected_network(n: int, extra_edge_fraction: float = 0.7, seed: int = 0,
                             kind=Kind.NETWORK_FLOW, **overrides) -> Network:
    """Random connected network: random spanning tree plus floor(frac*n) extra edges.

    The nominal load is feasible at ``feasibility_headroom`` times its value;
    line capacities are scaled up until that holds.
    """
    if n < 2:
        raise InvalidParam("n must be >= 2")
    if extra_edge_fraction < 0:
        raise InvalidParam("extra_edge_fraction must be >= 0")
    kind = Kind(kind)
    p = {**RANDOM_DEFAULTS, **overrides}
    rng = np.random.default_rng(seed)

    order = rng.permutation(n)
    edge_set = set()
    edges = []
    for i in range(1, n):
        u = int(order[i])
        v = int(order[rng.integers(0, i)])
        edges.append((v, u))
        edge_set.add(frozenset((u, v)))
    extra = int(np.floor(extra_edge_fraction * n))
    max_edges = n * (n - 1) // 2
    extra = min(extra, max_edges - len(edges))
    while extra > 0:
        u, v = (int(a) for a in rng.integers(0, n, size=2))
        if u == v or frozenset((u, v)) in edge_set:
            continue
        edge_set.add(frozenset((u, v)))
        edges.append((u, v))
        extra -= 1
    edges = np.asarray(edges, dtype=np.int64)
    m = len(edges)

    is_gen = rng.random(n) < p["generator_fraction"]
    is_gen[rng.integers(0, n)] = True
    cost = np.where(is_gen, rng.uniform(*p["generator_cost"], n), rng.uniform(*p["local_cost"], n))
    gen_cap = np.where(is_gen, rng.uniform(*p["generator_cap"], n), rng.uniform(*p["local_cap"], n))
    load = rng.uniform(*p["load"], n)
    fbar = rng.uniform(*p["flow_cap"], m)
    if kind is Kind.DC_OPF:
        funder = fbar.copy()
        b = rng.uniform(*p["susceptance"], m)
    else:
        funder = fbar * rng.uniform(*p["reverse_cap_ratio"], m)
        b = np.ones(m)
    # total capacity must cover the stressed load
    total_need = p["feasibility_headroom"] * load.sum()
    if gen_cap.sum() < 1.2 * total_need:
        gen_cap = gen_cap * (1.2 * total_need / gen_cap.sum())

    name = f"random_{kind.value}_{n}_{seed}"
    for _ in range(30):
        net = Network(n, edges, cost, gen_cap, fbar, funder, b, kind, nominal_load=load, name=name)
        if _nominal_feasible(net, p["feasibility_headroom"]):
            return net
        fbar = fbar * 1.5
        funder = funder * 1.5
    raise InvalidParam("could not size capacities for a feasible nominal instance")


def _nominal_feasible(net: Network, headroom: float) -> bool:
    if net.kind is Kind.NETWORK_FLOW and np.all(net.nominal_load >= 0):
        return all(_flow_feasible(net, scale * net.nominal_load) for scale in (1.0, headroom))
    from .oracle import solve
    from .errors import Infeasible

    structure = build_flow_structure(net)
    for scale in (1.0, headroom):
        try:
            solve(net, structure, scale * net.nominal_load)
        except Infeasible:
            return False
    return True


def _flow_feasible(net: Network, load, resolution=1e6) -> bool:
    """Max-flow test for a network-flow instance with nonnegative loads.

    Capacities are scaled to integers, rounding supplies down and demands up,
    so a True answer is conservative.
    """
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import maximum_flow

    n = net.n
    src, snk = n, n + 1
    t, h = net.edges[:, 0], net.edges[:, 1]
    rows = np.concatenate([np.full(n, src), np.arange(n), t, h])
    cols = np.concatenate([np.arange(n), np.full(n, snk), h, t])
    caps = np.concatenate([np.floor(net.gen_cap * resolution), np.ceil(load * resolution),
                           np.floor(net.flow_cap_upper * resolution), np.floor(net.flow_cap_lower * resolution)])
    graph = csr_matrix((caps.astype(np.int64), (rows, cols)), shape=(n + 2, n + 2))
    graph.sum_duplicates()
    value = maximum_flow(graph, src, snk).flow_value
    return value >= int(np.ceil(load * resolution).sum())
