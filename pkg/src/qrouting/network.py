"""Congestion network model and classical routing solvers.

A routing network is a directed graph with one source, one sink and a unit
of divisible demand.  Every edge carries a polynomial latency
L(f) = a + b f + c f^2 with nonnegative coefficients.  Decision nodes have
exactly two outgoing edges, labeled option 0 and option 1; every other
non-sink node has a single outgoing edge and simply forwards its inflow.

Routing is specified per decision node by the fraction of that node's
inflow sent along its option-0 edge.  Node inflows then satisfy a linear
conservation system.  Cycles of forwarding (for instance the bidirectional
free edge of the Braess graph) make this system genuinely simultaneous:
its determinant vanishes exactly when flow would circulate forever, which
is reported as :class:`LoopDivergence`.

The classical solvers search fraction space directly: a coarse grid scan
followed by coordinate-descent refinement, minimizing either the Beckmann
potential (sum of latency integrals, whose minimizers are the selfish
equilibria) or the total cost (whose minimizers are socially optimal).
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

GRID_STEP = 0.01          # fraction-space grid resolution for the coarse scan
DIVERGENCE_TOL = 1e-12    # |det| at or below this means endless circulation
REFINE_XTOL = 1e-8        # coordinate-descent bracket tolerance
TIE_RTOL = 1e-9           # objective values this close count as tied
_MAX_GRID_POINTS = 2.5e7  # hard cap; search is exponential in decision nodes


class LoopDivergence(Exception):
    """All inflow would circulate forever around a forwarding cycle."""


@dataclass(frozen=True)
class LatencyFn:
    """Polynomial edge latency L(f) = a + b f + c f^2, nondecreasing on f >= 0."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        for name in ("a", "b", "c"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"latency coefficient {name} must be finite and >= 0")
            object.__setattr__(self, name, v)

    def __call__(self, f):
        return self.a + self.b * f + self.c * f * f

    def integral(self, f):
        """Beckmann term: integral of the latency from 0 to f."""
        return self.a * f + self.b * f * f / 2.0 + self.c * f ** 3 / 3.0


@dataclass(frozen=True)
class Edge:
    tail: str
    head: str
    latency: LatencyFn = field(default_factory=LatencyFn)


@dataclass(frozen=True)
class DecisionNode:
    """A node with two outgoing edges; option0/option1 index into network.edges."""

    node: str
    option0: int
    option1: int


@dataclass(frozen=True)
class RoutingNetwork:
    nodes: tuple
    edges: tuple
    decisions: tuple
    source: str
    sink: str
    demand: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "decisions", tuple(self.decisions))
        if len(set(self.nodes)) != len(self.nodes):
            raise ValueError("duplicate node names")
        for endpoint in (self.source, self.sink):
            if endpoint not in self.nodes:
                raise ValueError(f"node {endpoint!r} not in node list")
        if self.source == self.sink:
            raise ValueError("source and sink must differ")
        if not (math.isfinite(self.demand) and self.demand > 0):
            raise ValueError("demand must be positive and finite")
        seen = set()
        for e in self.edges:
            if e.tail not in self.nodes or e.head not in self.nodes:
                raise ValueError(f"edge {e.tail}->{e.head} references unknown node")
            if e.tail == e.head:
                raise ValueError(f"self-loop on node {e.tail!r}")
            if (e.tail, e.head) in seen:
                raise ValueError(f"parallel edge {e.tail}->{e.head}")
            seen.add((e.tail, e.head))
        out_edges = {n: [] for n in self.nodes}
        for i, e in enumerate(self.edges):
            out_edges[e.tail].append(i)
        if out_edges[self.sink]:
            raise ValueError("sink must have no outgoing edges")
        decided = set()
        for d in self.decisions:
            if d.node in decided:
                raise ValueError(f"node {d.node!r} listed as decision node twice")
            decided.add(d.node)
            outs = out_edges.get(d.node)
            if outs is None or len(outs) != 2:
                raise ValueError(f"decision node {d.node!r} must have exactly 2 outgoing edges")
            if sorted((d.option0, d.option1)) != sorted(outs):
                raise ValueError(f"options of decision node {d.node!r} must be its outgoing edges")
        for n in self.nodes:
            if n not in decided and len(out_edges[n]) > 1:
                raise ValueError(f"non-decision node {n!r} has more than one outgoing edge")
        # Every edge must lie on some source->sink walk.
        fwd = _reachable(self.nodes, [(e.tail, e.head) for e in self.edges], self.source)
        bwd = _reachable(self.nodes, [(e.head, e.tail) for e in self.edges], self.sink)
        for e in self.edges:
            if e.tail not in fwd or e.head not in bwd:
                raise ValueError(f"edge {e.tail}->{e.head} is on no source->sink walk")

    @property
    def n_decisions(self) -> int:
        return len(self.decisions)

    def edge_index(self, tail: str, head: str) -> int:
        for i, e in enumerate(self.edges):
            if e.tail == tail and e.head == head:
                return i
        raise KeyError(f"no edge {tail}->{head}")


def _reachable(nodes, arcs, start):
    adj = {n: [] for n in nodes}
    for a, b in arcs:
        adj[a].append(b)
    seen, stack = {start}, [start]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def make_braess(include_central: bool = True, latencies: dict | None = None) -> RoutingNetwork:
    """Four-node diamond with an optional free bidirectional central edge.

    Defaults: L(f)=f on s->u and v->t, constant 1 on s->v and u->t, and
    (when present) zero latency on u->v and v->u.  ``latencies`` overrides
    entries by (tail, head) pair with a LatencyFn or an (a, b, c) triple.
    """
    lat = {
        ("s", "u"): LatencyFn(0, 1, 0),
        ("s", "v"): LatencyFn(1, 0, 0),
        ("u", "t"): LatencyFn(1, 0, 0),
        ("v", "t"): LatencyFn(0, 1, 0),
        ("u", "v"): LatencyFn(0, 0, 0),
        ("v", "u"): LatencyFn(0, 0, 0),
    }
    for key, value in (latencies or {}).items():
        if key not in lat:
            raise KeyError(f"unknown edge {key!r}")
        lat[key] = value if isinstance(value, LatencyFn) else LatencyFn(*value)
    pairs = [("s", "u"), ("s", "v"), ("u", "t"), ("v", "t")]
    if include_central:
        pairs += [("u", "v"), ("v", "u")]
    edges = tuple(Edge(a, b, lat[(a, b)]) for a, b in pairs)
    if include_central:
        decisions = (DecisionNode("s", 0, 1), DecisionNode("u", 2, 4), DecisionNode("v", 3, 5))
    else:
        decisions = (DecisionNode("s", 0, 1),)
    return RoutingNetwork(("s", "u", "v", "t"), edges, decisions, "s", "t")


# ---------------------------------------------------------------------------
# Flow propagation
# ---------------------------------------------------------------------------

class _Solver:
    """Precomputed index structure for vectorized flow and value solves."""

    def __init__(self, net: RoutingNetwork):
        self.net = net
        nodes = list(net.nodes)
        idx = {n: i for i, n in enumerate(nodes)}
        n_nodes, n_edges = len(nodes), len(net.edges)
        self.tail = np.array([idx[e.tail] for e in net.edges])
        self.head = np.array([idx[e.head] for e in net.edges])
        self.coeff = np.array([[e.latency.a, e.latency.b, e.latency.c] for e in net.edges])
        # share_kind[e]: decision index k -> share is p[k] (option0) or 1-p[k]
        # (option1); -1 -> share is 1 (forwarding node).
        self.share_dec = np.full(n_edges, -1)
        self.share_opt = np.zeros(n_edges, dtype=int)
        for k, d in enumerate(net.decisions):
            self.share_dec[d.option0] = k
            self.share_opt[d.option0] = 0
            self.share_dec[d.option1] = k
            self.share_opt[d.option1] = 1
        indeg = np.zeros(n_nodes, dtype=int)
        outdeg = np.zeros(n_nodes, dtype=int)
        for e in net.edges:
            indeg[idx[e.head]] += 1
            outdeg[idx[e.tail]] += 1
        self.injection = np.zeros(n_nodes)
        self.injection[idx[net.source]] = net.demand
        # Inflow unknowns: fed by at least one edge and feeding at least one.
        self.unknown = [i for i in range(n_nodes) if indeg[i] > 0 and outdeg[i] > 0]
        self.upos = {n: i for i, n in enumerate(self.unknown)}
        self.known_inflow = np.array(
            [self.injection[i] if indeg[i] == 0 else 0.0 for i in range(n_nodes)])
        # Value unknowns: every node with an outgoing edge (the sink has none).
        self.vnodes = [i for i in range(n_nodes) if outdeg[i] > 0]
        self.vpos = {n: i for i, n in enumerate(self.vnodes)}
        self.dec_opt_edges = np.array(
            [[d.option0, d.option1] for d in net.decisions], dtype=int
        ).reshape(len(net.decisions), 2)

    def shares(self, fractions: np.ndarray) -> np.ndarray:
        """(B, K) fractions -> (B, E) per-edge share of the tail's inflow."""
        bsize = fractions.shape[0]
        out = np.ones((bsize, len(self.net.edges)))
        for e in range(len(self.net.edges)):
            k = self.share_dec[e]
            if k >= 0:
                out[:, e] = fractions[:, k] if self.share_opt[e] == 0 else 1.0 - fractions[:, k]
        return out

    def inflows(self, shares: np.ndarray):
        """Solve the conservation system.  Returns (inflow (B, N), ok (B,))."""
        bsize = shares.shape[0]
        n_nodes = len(self.net.nodes)
        m = len(self.unknown)
        inflow = np.tile(self.known_inflow, (bsize, 1))
        if m == 0:
            return inflow, np.ones(bsize, dtype=bool)
        a = np.zeros((bsize, m, m))
        a[:, np.arange(m), np.arange(m)] = 1.0
        rhs = np.tile(self.injection[self.unknown], (bsize, 1))
        for e in range(len(self.net.edges)):
            h = self.head[e]
            if h not in self.upos:
                continue
            i = self.upos[h]
            t = self.tail[e]
            if t in self.upos:
                a[:, i, self.upos[t]] -= shares[:, e]
            else:
                rhs[:, i] += shares[:, e] * self.known_inflow[t]
        sol, ok = _solve_small(a, rhs)
        # Circulation can only push inflows up; tiny negatives are roundoff.
        inflow[:, self.unknown] = sol
        return inflow, ok

    def edge_flows(self, fractions: np.ndarray):
        shares = self.shares(fractions)
        inflow, ok = self.inflows(shares)
        flows = shares * inflow[:, self.tail]
        flows[~ok] = np.nan
        return flows, ok

    def latencies(self, flows: np.ndarray) -> np.ndarray:
        c = self.coeff
        return c[:, 0] + c[:, 1] * flows + c[:, 2] * flows * flows

    def values(self, shares: np.ndarray, lat: np.ndarray):
        """Expected latency-to-sink per node (B, N); sink and dead nodes 0."""
        bsize = shares.shape[0]
        m = len(self.vnodes)
        a = np.zeros((bsize, m, m))
        a[:, np.arange(m), np.arange(m)] = 1.0
        rhs = np.zeros((bsize, m))
        for e in range(len(self.net.edges)):
            t = self.vpos[self.tail[e]]
            rhs[:, t] += shares[:, e] * lat[:, e]
            h = self.head[e]
            if h in self.vpos:
                a[:, t, self.vpos[h]] -= shares[:, e]
        sol, ok = _solve_small(a, rhs)
        values = np.zeros((bsize, len(self.net.nodes)))
        values[:, self.vnodes] = sol
        return values, ok

    def option_latencies(self, fractions, flows):
        """(B, K, 2) latency-to-sink along each option of each decision node."""
        shares = self.shares(fractions)
        lat = self.latencies(flows)
        values, ok = self.values(shares, lat)
        opt_edges = self.dec_opt_edges
        lam = lat[:, opt_edges] + values[:, self.head[opt_edges]]
        lam[~ok] = np.nan
        return lam, ok


def _solve_small(a: np.ndarray, rhs: np.ndarray):
    """Batched solve of (B, m, m) systems with a divergence guard.

    Returns (solution, ok); rows with |det| <= DIVERGENCE_TOL get ok=False
    and an unspecified solution.  m is tiny (loop nodes only), so closed
    forms beat LAPACK dispatch for the common sizes.
    """
    m = a.shape[1]
    if m == 1:
        det = a[:, 0, 0]
        ok = np.abs(det) > DIVERGENCE_TOL
        safe = np.where(ok, det, 1.0)
        return rhs / safe[:, None], ok
    if m == 2:
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        ok = np.abs(det) > DIVERGENCE_TOL
        safe = np.where(ok, det, 1.0)
        x0 = (rhs[:, 0] * a[:, 1, 1] - rhs[:, 1] * a[:, 0, 1]) / safe
        x1 = (a[:, 0, 0] * rhs[:, 1] - a[:, 1, 0] * rhs[:, 0]) / safe
        return np.stack([x0, x1], axis=1), ok
    det = np.linalg.det(a)
    ok = np.abs(det) > DIVERGENCE_TOL
    fixed = np.where(ok[:, None, None], a, np.eye(m))
    return np.linalg.solve(fixed, rhs[..., None])[..., 0], ok


@functools.lru_cache(maxsize=32)
def _solver(net: RoutingNetwork) -> _Solver:
    return _Solver(net)


def _check_fractions(net: RoutingNetwork, fractions) -> np.ndarray:
    p = np.asarray(fractions, dtype=float)
    if p.shape != (net.n_decisions,):
        raise ValueError(f"expected {net.n_decisions} routing fractions, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("routing fractions must lie in [0, 1]")
    return p


def solve_flows(net: RoutingNetwork, fractions) -> np.ndarray:
    """Edge flows induced by per-decision-node option-0 fractions.

    Returns one flow per edge, in network edge order.  Raises
    LoopDivergence when the conservation system is singular (all inflow
    circulates forever).
    """
    p = _check_fractions(net, fractions)
    flows, ok = _solver(net).edge_flows(p[None, :])
    if not ok[0]:
        raise LoopDivergence(f"flow circulates endlessly at fractions {p.tolist()}")
    return np.maximum(flows[0], 0.0)  # clip roundoff negatives


def total_cost(net: RoutingNetwork, flows) -> float:
    """Total cost: sum over edges of flow times latency at that flow."""
    f = np.asarray(flows, dtype=float)
    lat = _solver(net).latencies(f[None, :])[0]
    return float(np.dot(f, lat))


def beckmann_potential(net: RoutingNetwork, flows) -> float:
    """Sum of per-edge latency integrals; minimized at selfish equilibrium."""
    f = np.asarray(flows, dtype=float)
    return float(sum(e.latency.integral(f[i]) for i, e in enumerate(net.edges)))


def option_latencies(net: RoutingNetwork, fractions, flows) -> np.ndarray:
    """Per decision node, expected latency-to-sink along option 0 and 1.

    Defined through node values V (expected remaining latency under the
    current fractions), so a player sees the downstream consequences of a
    route, not just its first edge.
    """
    p = _check_fractions(net, fractions)
    f = np.asarray(flows, dtype=float)
    lam, ok = _solver(net).option_latencies(p[None, :], f[None, :])
    if not ok[0]:
        raise LoopDivergence("node values diverge at these fractions")
    return lam[0]


def cancel_free_cycles(net: RoutingNetwork, flows) -> np.ndarray:
    """Remove circulation on cycles whose edges all have identically zero latency.

    Such circulation is unobservable: it changes no latency and no cost.
    Reported equilibrium flows are canonicalized with this so that runs are
    comparable.  Flows on any other edge are untouched.
    """
    f = np.array(flows, dtype=float)
    free = [i for i, e in enumerate(net.edges)
            if e.latency.a == 0 and e.latency.b == 0 and e.latency.c == 0]
    while True:
        live = {i: net.edges[i] for i in free if f[i] > 1e-15}
        adj = {}
        for i, e in live.items():
            adj.setdefault(e.tail, []).append(i)
        cycle = _find_cycle(adj, {i: net.edges[i].head for i in live})
        if cycle is None:
            return f
        f[cycle] -= f[cycle].min()


def _find_cycle(adj, head_of):
    """One directed cycle (as edge indices) in a tiny graph, or None."""
    for root in list(adj):
        path_edges = []
        path_nodes = [root]
        stack = [iter(adj.get(root, ()))]
        while stack:
            ei = next(stack[-1], None)
            if ei is None:
                stack.pop()
                path_nodes.pop()
                if path_edges:
                    path_edges.pop()
                continue
            nxt = head_of[ei]
            if nxt in path_nodes:
                return np.array(path_edges[path_nodes.index(nxt):] + [ei])
            path_edges.append(ei)
            path_nodes.append(nxt)
            stack.append(iter(adj.get(nxt, ())))
    return None


# ---------------------------------------------------------------------------
# Equilibrium and optimum by direct search over fraction space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchResult:
    """Minimizer of a fraction-space search.

    ``flows`` are canonicalized with :func:`cancel_free_cycles`: the
    central free cycle can carry arbitrary circulation at identical cost,
    and the canonical representative is the comparable one.
    """

    fractions: np.ndarray
    flows: np.ndarray
    cost: float


@functools.lru_cache(maxsize=8)
def _grid_objectives(net: RoutingNetwork):
    """Beckmann and total-cost values on the fraction grid (inf where divergent)."""
    k = net.n_decisions
    axis = np.linspace(0.0, 1.0, round(1.0 / GRID_STEP) + 1)
    if len(axis) ** k > _MAX_GRID_POINTS:
        raise ValueError(f"grid search infeasible for {k} decision nodes")
    mesh = np.meshgrid(*([axis] * k), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    solver = _solver(net)
    beck = np.empty(len(pts))
    cost = np.empty(len(pts))
    chunk = 200_000
    coeff = solver.coeff
    for lo in range(0, len(pts), chunk):
        sl = slice(lo, min(lo + chunk, len(pts)))
        flows, ok = solver.edge_flows(pts[sl])
        fl = np.where(ok[:, None], flows, 0.0)
        lat = solver.latencies(fl)
        cost[sl] = np.where(ok, (fl * lat).sum(axis=1), np.inf)
        integ = (coeff[:, 0] * fl + coeff[:, 1] * fl ** 2 / 2.0
                 + coeff[:, 2] * fl ** 3 / 3.0).sum(axis=1)
        beck[sl] = np.where(ok, integ, np.inf)
    return pts, beck, cost


def _objective_fn(net: RoutingNetwork, kind: str):
    solver = _solver(net)

    def value(p):
        flows, ok = solver.edge_flows(np.asarray(p, dtype=float)[None, :])
        if not ok[0]:
            return math.inf
        f = flows[0]
        lat = solver.latencies(f[None, :])[0]
        if kind == "cost":
            return float(np.dot(f, lat))
        c = solver.coeff
        return float((c[:, 0] * f + c[:, 1] * f ** 2 / 2.0 + c[:, 2] * f ** 3 / 3.0).sum())

    return value


def _golden_refine(value, p0, v0):
    """Coordinate descent with golden-section line searches around p0."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    p = np.array(p0, dtype=float)
    best = v0
    for _ in range(40):
        improved = False
        for j in range(len(p)):
            lo = max(0.0, p[j] - 2 * GRID_STEP)
            hi = min(1.0, p[j] + 2 * GRID_STEP)
            a, b = lo, hi
            x1 = b - invphi * (b - a)
            x2 = a + invphi * (b - a)

            def at(x):
                q = p.copy()
                q[j] = x
                return value(q)

            f1, f2 = at(x1), at(x2)
            while b - a > REFINE_XTOL:
                if f1 <= f2:
                    b, x2, f2 = x2, x1, f1
                    x1 = b - invphi * (b - a)
                    f1 = at(x1)
                else:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + invphi * (b - a)
                    f2 = at(x2)
            xbest, fbest = (x1, f1) if f1 <= f2 else (x2, f2)
            if fbest < best - 1e-13 * max(1.0, abs(best)):
                p[j] = xbest
                best = fbest
                improved = True
        if not improved:
            break
    return p, best


def _search(net: RoutingNetwork, kind: str) -> SearchResult:
    pts, beck, cost = _grid_objectives(net)
    values = beck if kind == "beckmann" else cost
    vmin = values.min()
    if not math.isfinite(vmin):
        raise LoopDivergence("every grid point diverges")
    ties = np.nonzero(values <= vmin + TIE_RTOL * max(1.0, abs(vmin)))[0]
    # Flat objectives are broken toward uniform fractions, deterministically.
    dist = ((pts[ties] - 0.5) ** 2).sum(axis=1)
    win = ties[np.argmin(dist)]
    p, _ = _golden_refine(_objective_fn(net, kind), pts[win], float(values[win]))
    flows = solve_flows(net, p)
    return SearchResult(p, cancel_free_cycles(net, flows), total_cost(net, flows))


def classical_equilibrium(net: RoutingNetwork) -> SearchResult:
    """Selfish (Wardrop) equilibrium: minimize the Beckmann potential."""
    return _search(net, "beckmann")


def optimal_flow(net: RoutingNetwork) -> SearchResult:
    """Socially optimal routing: minimize total cost directly."""
    return _search(net, "cost")


def price_of_anarchy(net: RoutingNetwork) -> float:
    """Equilibrium total cost divided by optimal total cost."""
    eq = classical_equilibrium(net)
    opt = optimal_flow(net)
    if opt.cost <= 1e-12:
        raise ValueError("price of anarchy undefined: optimal cost is zero")
    return eq.cost / opt.cost


# ---------------------------------------------------------------------------
# Symmetry classification of Braess-topology variants
# ---------------------------------------------------------------------------

def _braess_outer(net: RoutingNetwork):
    return (net.edges[net.edge_index("s", "u")].latency,
            net.edges[net.edge_index("s", "v")].latency,
            net.edges[net.edge_index("u", "t")].latency,
            net.edges[net.edge_index("v", "t")].latency)


def is_mirror_symmetric(net: RoutingNetwork) -> bool:
    """L_su == L_sv and L_ut == L_vt (matching outgoing pairs)."""
    su, sv, ut, vt = _braess_outer(net)
    return su == sv and ut == vt


def is_diagonally_symmetric(net: RoutingNetwork) -> bool:
    """L_su == L_vt and L_sv == L_ut (matching opposite corners)."""
    su, sv, ut, vt = _braess_outer(net)
    return su == vt and sv == ut
