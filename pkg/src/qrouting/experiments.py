"""Experiment drivers and the I/O surface.

Drivers: entanglement sweeps, seed ensembles and latency-variant
comparisons over Braess-topology networks.  I/O: a line-oriented text
grammar for configs and networks, CSV/JSON emission of results and the
presets used throughout the repo.

Two presets matter (see the README calibration note for how they were
chosen):

* ``anchor_config``   the configuration that reproduces the published
  cost-versus-entanglement anchors (2.0 at gamma=0, 1.5 at pi/4, 2.0 at
  pi/2) with the printed update rule and a fixed 400-round horizon;
* ``refined_config``  the configuration whose equilibria reproduce the
  published flow pattern at pi/4 (half flow on every outer edge, none on
  the central pair): selfish descent on expected latency-to-sink, run
  until the cost trace settles.
"""
from __future__ import annotations

import concurrent.futures
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import (GameConfig, RunSummary, RunTrace, run_ensemble,
                       run_repeated_game)
from .network import (LatencyFn, RoutingNetwork, DecisionNode, Edge,
                      is_diagonally_symmetric, is_mirror_symmetric,
                      make_braess, optimal_flow, classical_equilibrium,
                      price_of_anarchy)

THREADS_ENV = "QROUTING_THREADS"
DEFAULT_SWEEP_POINTS = 33


def anchor_config(gamma: float = 0.0, **kw) -> GameConfig:
    """Configuration calibrated to the published cost-vs-entanglement curve."""
    base = dict(gamma=gamma, objective_mode="path-diff", step_sign="paper",
                gain=10.0, fd_step=0.01, iterations=400)
    base.update(kw)
    return GameConfig(**base)


def refined_config(gamma: float = math.pi / 4, **kw) -> GameConfig:
    """Configuration calibrated to the published equilibrium flow pattern."""
    base = dict(gamma=gamma, objective_mode="own-latency", step_sign="descent",
                gain=10.0, fd_step=0.01, iterations=20000,
                stop_on_convergence=True, convergence_window=100,
                convergence_tol=1e-4)
    base.update(kw)
    return GameConfig(**base)


PRESETS = {"anchors": anchor_config, "refined": refined_config}


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


def _map_ordered(fn, items):
    """Map preserving order; the thread count never changes the values."""
    n = _thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    gamma: float
    median_cost: float
    spread: float            # max - min equilibrium cost across seeds
    kappa_q: float           # median cost / optimal cost
    convergence_rate: float  # fraction of seeds whose cost trace settled


@dataclass(frozen=True)
class SweepResult:
    optimal_cost: float
    seeds_per_point: int
    rows: tuple


@dataclass(frozen=True)
class EnsembleResult:
    config: GameConfig
    network: RoutingNetwork
    rows: tuple  # RunSummary per seed


def default_gamma_grid(points: int = DEFAULT_SWEEP_POINTS) -> np.ndarray:
    return np.linspace(0.0, math.pi / 2, points)


def ensemble(config: GameConfig, net: RoutingNetwork, n_seeds: int,
             seed0: Optional[int] = None) -> EnsembleResult:
    """Independent runs with consecutive seeds; never drops a run.

    Non-converged runs are still reported (flagged, with their trailing
    window mean cost).  Honors QROUTING_THREADS by chunking the seed range;
    chunking cannot change any per-seed value.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    first = config.seed if seed0 is None else seed0
    n = _thread_count()
    if n <= 1 or n_seeds <= 1:
        rows = run_ensemble(config, net, n_seeds, first)
    else:
        bounds = np.linspace(0, n_seeds, min(n, n_seeds) + 1).astype(int)
        chunks = [(first + a, b - a) for a, b in zip(bounds, bounds[1:]) if b > a]
        parts = _map_ordered(lambda c: run_ensemble(config, net, c[1], c[0]), chunks)
        rows = [r for part in parts for r in part]
    return EnsembleResult(config, net, tuple(rows))


def gamma_sweep(config: GameConfig, net: RoutingNetwork,
                gammas: Optional[Sequence[float]] = None,
                seeds_per_point: int = 10) -> SweepResult:
    """Equilibrium cost as a function of the entangling parameter."""
    grid = default_gamma_grid() if gammas is None else np.asarray(list(gammas), dtype=float)
    if grid.ndim != 1 or len(grid) < 1:
        raise ValueError("gamma grid must be a nonempty 1-d sequence")
    if np.any(grid < -1e-12) or np.any(grid > math.pi / 2 + 1e-12):
        raise ValueError("gamma grid must lie within [0, pi/2]")
    opt = optimal_flow(net).cost

    def point(g: float) -> SweepRow:
        res = ensemble(config.with_(gamma=float(g)), net, seeds_per_point)
        costs = np.array([r.equilibrium_cost for r in res.rows])
        return SweepRow(
            gamma=float(g),
            median_cost=float(np.median(costs)),
            spread=float(costs.max() - costs.min()),
            kappa_q=float(np.median(costs) / opt),
            convergence_rate=float(np.mean([r.converged for r in res.rows])),
        )

    rows = _map_ordered(point, list(grid))
    return SweepResult(optimal_cost=opt, seeds_per_point=seeds_per_point, rows=tuple(rows))


@dataclass(frozen=True)
class VariantRow:
    name: str
    mirror_symmetric: bool
    diagonally_symmetric: bool
    kappa_c: float
    kappa_q: float
    classical_cost: float
    quantum_cost: float
    optimal_cost: float
    classical_flows: np.ndarray
    quantum_flows: np.ndarray


@dataclass(frozen=True)
class VariantReport:
    config: GameConfig
    n_seeds: int
    rows: tuple


def default_variants() -> list:
    """Braess-topology latency variants exercised by the comparison driver."""
    return [
        ("canonical", make_braess()),
        ("flat-constant", make_braess(latencies={("s", "u"): (1, 0, 0),
                                                 ("v", "t"): (1, 0, 0)})),
        ("steep-vt", make_braess(latencies={("v", "t"): (0, 2, 0)})),
        ("quad-su", make_braess(latencies={("s", "u"): (0, 0, 1)})),
        ("quad-vt", make_braess(latencies={("v", "t"): (0, 0, 1)})),
        ("quad-sym", make_braess(latencies={("s", "u"): (0, 0, 1),
                                            ("v", "t"): (0, 0, 1)})),
    ]


def variant_comparison(variants: Optional[Sequence] = None,
                       config: Optional[GameConfig] = None,
                       n_seeds: int = 10) -> VariantReport:
    """Classical and entangled price of anarchy across latency variants.

    The entangled side runs the ensemble at the configuration's gamma
    (default: the anchor calibration at pi/4) and takes the median
    equilibrium cost over seeds; per-edge quantum flows are the per-edge
    median of the seed equilibria.
    """
    if config is None:
        config = anchor_config(gamma=math.pi / 4)
    pairs = default_variants() if variants is None else list(variants)

    def row(pair) -> VariantRow:
        name, net = pair
        eq = classical_equilibrium(net)
        opt = optimal_flow(net)
        res = ensemble(config, net, n_seeds)
        costs = np.array([r.equilibrium_cost for r in res.rows])
        qcost = float(np.median(costs))
        flows = np.array([r.equilibrium_flows for r in res.rows
                          if r.equilibrium_flows is not None])
        qflows = np.median(flows, axis=0) if len(flows) else np.full(len(net.edges), np.nan)
        return VariantRow(
            name=name,
            mirror_symmetric=is_mirror_symmetric(net),
            diagonally_symmetric=is_diagonally_symmetric(net),
            kappa_c=eq.cost / opt.cost,
            kappa_q=qcost / opt.cost,
            classical_cost=eq.cost,
            quantum_cost=qcost,
            optimal_cost=opt.cost,
            classical_flows=eq.flows,
            quantum_flows=qflows,
        )

    return VariantReport(config=config, n_seeds=n_seeds,
                         rows=tuple(_map_ordered(row, pairs)))


@dataclass(frozen=True)
class ClassicalReport:
    network: RoutingNetwork
    equilibrium_cost: float
    optimal_cost: float
    kappa: float
    equilibrium_flows: np.ndarray
    optimal_flows: np.ndarray


def classical_report(net: RoutingNetwork) -> ClassicalReport:
    eq = classical_equilibrium(net)
    opt = optimal_flow(net)
    return ClassicalReport(net, eq.cost, opt.cost, price_of_anarchy(net),
                           eq.flows, opt.flows)


# ---------------------------------------------------------------------------
# Text grammar: configs and networks
# ---------------------------------------------------------------------------

_CONFIG_TYPES = {
    "gamma": float, "gain": float, "fd_step": float, "iterations": int,
    "seed": int, "objective_mode": str, "step_sign": str,
    "penalty_cost": float, "convergence_window": int, "convergence_tol": float,
    "stop_on_convergence": bool,
}


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _meaningful_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def parse_config(text: str) -> GameConfig:
    """``key = value`` lines; unknown keys and bad values are line errors.

    Unspecified fields take the documented defaults (gain 10, fd_step 0.01,
    iterations 400, window 50, tol 1e-3, penalty 1e6, own-latency, descent).
    """
    values = {}
    for lineno, line in _meaningful_lines(text):
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_TYPES:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        typ = _CONFIG_TYPES[key]
        try:
            values[key] = _parse_bool(raw) if typ is bool else typ(raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: bad value for {key!r}: {exc}") from None
    return GameConfig(**values)


def format_config(config: GameConfig) -> str:
    lines = []
    for f in fields(GameConfig):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            text = str(v).lower()
        elif isinstance(v, str):
            text = v
        else:
            text = repr(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def parse_network(text: str) -> RoutingNetwork:
    """Line-oriented network description.

    Verbs: ``node N``, ``source N``, ``sink N``, ``demand X``,
    ``edge FROM TO A B C`` (latency a + b f + c f^2) and
    ``decision NODE HEAD0 HEAD1`` naming the option edges by their head
    node.  ``#`` starts a comment.
    """
    nodes, edges, decisions = [], [], []
    source = sink = None
    demand = 1.0
    for lineno, line in _meaningful_lines(text):
        parts = line.split()
        verb, args = parts[0], parts[1:]
        try:
            if verb == "node":
                (name,) = args
                nodes.append(name)
            elif verb == "source":
                (source,) = args
            elif verb == "sink":
                (sink,) = args
            elif verb == "demand":
                (raw,) = args
                demand = float(raw)
            elif verb == "edge":
                tail, head, a, b, c = args
                edges.append(Edge(tail, head, LatencyFn(float(a), float(b), float(c))))
            elif verb == "decision":
                node, head0, head1 = args
                decisions.append((node, head0, head1))
            else:
                raise ValueError(f"unknown verb {verb!r}")
        except ValueError as exc:
            raise ValueError(f"network line {lineno}: {exc}") from None
        except TypeError:
            raise ValueError(f"network line {lineno}: wrong argument count for {verb!r}") from None
    if source is None or sink is None:
        raise ValueError("network description must declare a source and a sink")
    index = {}
    for i, e in enumerate(edges):
        index[(e.tail, e.head)] = i
    dec = []
    for node, head0, head1 in decisions:
        try:
            dec.append(DecisionNode(node, index[(node, head0)], index[(node, head1)]))
        except KeyError as missing:
            raise ValueError(f"decision node {node!r} references missing edge "
                             f"{node}->{missing.args[0][1]}") from None
    return RoutingNetwork(tuple(nodes), tuple(edges), tuple(dec), source, sink, demand)


def format_network(net: RoutingNetwork) -> str:
    lines = [f"node {n}" for n in net.nodes]
    lines.append(f"source {net.source}")
    lines.append(f"sink {net.sink}")
    lines.append(f"demand {net.demand!r}")
    for e in net.edges:
        lat = e.latency
        lines.append(f"edge {e.tail} {e.head} {lat.a!r} {lat.b!r} {lat.c!r}")
    for d in net.decisions:
        lines.append(f"decision {d.node} {net.edges[d.option0].head} {net.edges[d.option1].head}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Result emission
# ---------------------------------------------------------------------------

def _g12(x) -> str:
    """Floats rendered with 12 significant digits."""
    return f"{float(x):.12g}"


def _j12(x):
    v = float(x)
    if math.isnan(v):
        return None
    return float(_g12(v))


def _param_columns(net: RoutingNetwork):
    return [f"{kind}_{d.node}" for d in net.decisions
            for kind in ("theta", "phi", "alpha")]


def _flow_columns(net: RoutingNetwork):
    return [f"f_{e.tail}{e.head}" for e in net.edges]


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _g12(v)


def _csv_text(header, rows) -> str:
    out = [",".join(header)]
    out += [",".join(_csv_cell(v) for v in row) for row in rows]
    return "\n".join(out) + "\n"


def _trace_table(trace: RunTrace):
    net = trace.network
    header = ["iteration"] + _param_columns(net) + _flow_columns(net) + ["total_cost"]
    rows = []
    for t in range(len(trace)):
        row = [t]
        row += list(trace.strategies[t].reshape(-1))
        row += list(trace.flows[t])
        row.append(trace.total_costs[t])
        rows.append(row)
    return header, rows


def _sweep_table(res: SweepResult):
    header = ["gamma", "median_cost", "spread", "kappa_q", "convergence_rate"]
    rows = [[r.gamma, r.median_cost, r.spread, r.kappa_q, r.convergence_rate]
            for r in res.rows]
    return header, rows


def _ensemble_table(res: EnsembleResult):
    net = res.network
    header = (["seed", "equilibrium_cost", "converged", "converged_at",
               "iterations_run"] + _param_columns(net) + _flow_columns(net))
    rows = []
    for r in res.rows:
        row = [r.seed, r.equilibrium_cost, r.converged, r.converged_at, r.iterations_run]
        row += list(r.final_strategies.reshape(-1))
        flows = r.equilibrium_flows
        row += list(flows) if flows is not None else [math.nan] * len(net.edges)
        rows.append(row)
    return header, rows


def _variant_table(rep: VariantReport):
    nets = {len(r.classical_flows) for r in rep.rows}
    if len(nets) > 1:
        raise ValueError("variant rows must share one topology for tabular output")
    first = rep.rows[0]
    n_edges = len(first.classical_flows)
    header = ["name", "mirror_symmetric", "diagonally_symmetric",
              "kappa_c", "kappa_q", "classical_cost", "quantum_cost", "optimal_cost"]
    header += [f"classical_f{i}" for i in range(n_edges)]
    header += [f"quantum_f{i}" for i in range(n_edges)]
    rows = []
    for r in rep.rows:
        row = [r.name, r.mirror_symmetric, r.diagonally_symmetric, r.kappa_c,
               r.kappa_q, r.classical_cost, r.quantum_cost, r.optimal_cost]
        row += list(r.classical_flows) + list(r.quantum_flows)
        rows.append(row)
    return header, rows


def _classical_table(rep: ClassicalReport):
    cols = _flow_columns(rep.network)
    header = ["equilibrium_cost", "optimal_cost", "kappa"]
    header += [f"equilibrium_{c}" for c in cols] + [f"optimal_{c}" for c in cols]
    row = [rep.equilibrium_cost, rep.optimal_cost, rep.kappa]
    row += list(rep.equilibrium_flows) + list(rep.optimal_flows)
    return header, [row]


_TABLES = {
    RunTrace: _trace_table,
    SweepResult: _sweep_table,
    EnsembleResult: _ensemble_table,
    VariantReport: _variant_table,
    ClassicalReport: _classical_table,
}


def render(result, fmt: str) -> str:
    """Deterministic text rendering of a result: csv, json or the text grammar."""
    if isinstance(result, GameConfig):
        if fmt != "text":
            raise ValueError("configs are emitted in the text grammar (fmt='text')")
        return format_config(result)
    if isinstance(result, RoutingNetwork):
        if fmt != "text":
            raise ValueError("networks are emitted in the text grammar (fmt='text')")
        return format_network(result)
    table = _TABLES.get(type(result))
    if table is None:
        raise TypeError(f"cannot emit result of type {type(result).__name__}")
    header, rows = table(result)
    if fmt == "csv":
        return _csv_text(header, rows)
    if fmt == "json":
        payload = {
            "kind": type(result).__name__,
            "columns": header,
            "rows": [[_j12(v) if isinstance(v, (float, np.floating)) else v
                      for v in row] for row in rows],
        }
        return json.dumps(payload, indent=2) + "\n"
    raise ValueError(f"unknown format {fmt!r}; expected csv or json")


def emit(result, fmt: str, destination) -> Path:
    """Write a result to ``destination``; same result, same bytes."""
    path = Path(destination)
    path.write_text(render(result, fmt), encoding="utf-8")
    return path
