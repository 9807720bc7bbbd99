"""Repeated selfish-routing game with qubit-valued strategies.

Each round every player (one per decision node) holds three rotation
angles.  The round evaluates the quantum pipeline into routing fractions
and flows, gives each player a local cost, then probes how that cost
responds to a small shift of each of the player's own angles and applies
a gain-scaled simultaneous update.

Three local cost readings are supported:

* ``edge-diff``    difference of the two outgoing edges' own latencies;
* ``path-diff``    difference of expected latency-to-sink along the two
                   options (downstream aware);
* ``own-latency``  the player's expected latency-to-sink under its current
                   split.

and two update signs: ``paper`` moves each angle against the drop of the
local cost (the literal printed rule, which ascends the objective) and
``descent`` moves with it (plain finite-difference descent).  Which
combination reproduces which published behavior is an empirical matter;
see the calibration notes in the README.

Rounds where the routing fractions make flow circulate endlessly are
charged ``penalty_cost`` instead of aborting, so the learning map is total.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .network import RoutingNetwork, _solver, cancel_free_cycles
from .quantum import StrategyParams, pipeline_marginals_batch

OBJECTIVE_MODES = ("edge-diff", "path-diff", "own-latency")
STEP_SIGNS = ("paper", "descent")

DEFAULT_PENALTY = 1e6


@dataclass(frozen=True)
class GameConfig:
    """Knobs of one repeated game; defaults follow the documented protocol."""

    gamma: float = 0.0
    gain: float = 10.0
    fd_step: float = 0.01
    iterations: int = 400
    seed: int = 0
    objective_mode: str = "own-latency"
    step_sign: str = "descent"
    penalty_cost: float = DEFAULT_PENALTY
    convergence_window: int = 50
    convergence_tol: float = 1e-3
    stop_on_convergence: bool = False

    def __post_init__(self):
        if not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite")
        if not (math.isfinite(self.gain) and self.gain >= 0):
            raise ValueError("gain must be a nonnegative real")
        if not (math.isfinite(self.fd_step) and self.fd_step > 0):
            raise ValueError("fd_step must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be an unsigned integer")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValueError(f"objective_mode must be one of {OBJECTIVE_MODES}")
        if self.step_sign not in STEP_SIGNS:
            raise ValueError(f"step_sign must be one of {STEP_SIGNS}")
        if self.penalty_cost <= 0:
            raise ValueError("penalty_cost must be positive")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")
        if self.convergence_tol <= 0:
            raise ValueError("convergence_tol must be positive")

    def with_(self, **kw) -> "GameConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class Evaluation:
    """One pipeline evaluation: state marginals down to total cost."""

    marginals: np.ndarray              # (K,) P(qubit k = 0) = option-0 fraction
    flows: Optional[np.ndarray]        # (E,) or None when diverged
    option_latencies: Optional[np.ndarray]  # (K, 2) or None when diverged
    total_cost: float                  # penalty_cost when diverged
    diverged: bool


def _params_array(strategies, n_players: int) -> np.ndarray:
    if isinstance(strategies, np.ndarray):
        arr = strategies.astype(float)
    else:
        rows = [s.as_array() if isinstance(s, StrategyParams) else np.asarray(s, dtype=float)
                for s in strategies]
        arr = np.stack(rows)
    if arr.shape != (n_players, 3):
        raise ValueError(f"expected {n_players} strategy triples, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("strategy parameters must be finite")
    return arr


def _pipeline_batch(params: np.ndarray, gamma: float, net: RoutingNetwork, penalty: float):
    """Evaluate a (B, K, 3) strategy batch; returns marginals, flows,

    option latencies, per-edge latencies, total costs and an ok mask.
    Diverged rows carry NaN flows/latencies and the penalty cost.
    """
    solver = _solver(net)
    marg = pipeline_marginals_batch(params, gamma)
    frac = np.clip(marg, 0.0, 1.0)  # guard roundoff outside [0, 1]
    flows, ok_f = solver.edge_flows(frac)
    safe_flows = np.where(ok_f[:, None], flows, 0.0)
    lat = solver.latencies(safe_flows)
    lam, ok_v = solver.option_latencies(frac, safe_flows)
    ok = ok_f & ok_v
    costs = np.where(ok, (safe_flows * lat).sum(axis=1), penalty)
    flows = np.where(ok[:, None], flows, np.nan)
    lam = np.where(ok[:, None, None], lam, np.nan)
    return marg, flows, lam, lat, costs, ok


def _local_costs_batch(net: RoutingNetwork, mode: str, marg, flows, lam, lat, ok, penalty):
    """(B, K) per-player local costs; diverged rows get the penalty."""
    solver = _solver(net)
    opt = solver.dec_opt_edges            # (K, 2) edge indices
    if mode == "edge-diff":
        pair = lat[:, opt]                # (B, K, 2)
        vals = pair[..., 0] - pair[..., 1]
    elif mode == "path-diff":
        vals = lam[..., 0] - lam[..., 1]
    elif mode == "own-latency":
        vals = marg * lam[..., 0] + (1.0 - marg) * lam[..., 1]
    else:
        raise ValueError(f"unknown objective mode {mode!r}")
    return np.where(ok[:, None], vals, penalty)


def evaluate(strategies, gamma: float, net: RoutingNetwork,
             penalty_cost: float = DEFAULT_PENALTY) -> Evaluation:
    """Quantum pipeline -> fractions -> flows -> option latencies -> cost."""
    params = _params_array(strategies, net.n_decisions)
    marg, flows, lam, lat, costs, ok = _pipeline_batch(
        params[None], gamma, net, penalty_cost)
    if ok[0]:
        return Evaluation(marg[0], flows[0], lam[0], float(costs[0]), False)
    return Evaluation(marg[0], None, None, float(costs[0]), True)


def local_cost(player: int, mode: str, evaluation: Evaluation,
               net: RoutingNetwork, penalty_cost: float = DEFAULT_PENALTY) -> float:
    """One player's local cost reading from an evaluation."""
    if not 0 <= player < net.n_decisions:
        raise ValueError(f"player index {player} out of range")
    if evaluation.diverged:
        return float(penalty_cost)
    solver = _solver(net)
    lam = evaluation.option_latencies
    if mode == "edge-diff":
        e0, e1 = solver.dec_opt_edges[player]
        f = evaluation.flows
        return float(net.edges[e0].latency(f[e0]) - net.edges[e1].latency(f[e1]))
    if mode == "path-diff":
        return float(lam[player, 0] - lam[player, 1])
    if mode == "own-latency":
        p = evaluation.marginals[player]
        return float(p * lam[player, 0] + (1.0 - p) * lam[player, 1])
    raise ValueError(f"unknown objective mode {mode!r}")


def perturbed_cost(player: int, param_index: int, strategies, d: float,
                   config: GameConfig, net: RoutingNetwork) -> float:
    """Player's local cost after shifting one of its own angles by +d."""
    if param_index not in (0, 1, 2):
        raise ValueError("param_index must be 0 (theta), 1 (phi) or 2 (alpha)")
    params = _params_array(strategies, net.n_decisions).copy()
    params[player, param_index] += d
    ev = evaluate(params, config.gamma, net, config.penalty_cost)
    return local_cost(player, config.objective_mode, ev, net, config.penalty_cost)


def update_step(strategies, base_costs, perturbed_costs, config: GameConfig) -> np.ndarray:
    """Simultaneous update of all angles from a shared base point.

    ``paper`` sign:   x <- x - M (C_base - C_perturbed)
    ``descent`` sign: x <- x + M (C_base - C_perturbed)
    """
    params = np.array(strategies, dtype=float)
    base = np.asarray(base_costs, dtype=float)[:, None]
    pert = np.asarray(perturbed_costs, dtype=float)
    sign = -1.0 if config.step_sign == "paper" else 1.0
    return params + sign * config.gain * (base - pert)


@dataclass(frozen=True)
class RunTrace:
    """Per-iteration record of one repeated game plus its equilibrium summary."""

    config: GameConfig
    network: RoutingNetwork
    strategies: np.ndarray      # (T, K, 3) angles at the start of each round
    marginals: np.ndarray       # (T, K)
    flows: np.ndarray           # (T, E), NaN rows where the round diverged
    local_costs: np.ndarray     # (T, K) base local costs
    total_costs: np.ndarray     # (T,), penalty-bounded, always finite
    diverged: np.ndarray        # (T,) bool
    final_strategies: np.ndarray    # (K, 3) after the last update
    converged: bool
    converged_at: Optional[int]
    equilibrium_cost: float
    equilibrium_flows: Optional[np.ndarray]

    def __len__(self):
        return len(self.total_costs)

    @property
    def seed(self) -> int:
        return self.config.seed


@dataclass(frozen=True)
class RunSummary:
    """Equilibrium summary of one run, without the per-iteration record."""

    seed: int
    iterations_run: int
    converged: bool
    converged_at: Optional[int]
    equilibrium_cost: float
    equilibrium_flows: Optional[np.ndarray]
    final_strategies: np.ndarray


def detect_convergence(total_costs, window: int = 50, tol: float = 1e-3):
    """First iteration count k >= window whose trailing window is tol-flat.

    Returns (converged, k); k counts iterations, so a constant trace
    converges at exactly ``window``.
    """
    costs = np.asarray(total_costs, dtype=float)
    if window > len(costs):
        raise ValueError("window exceeds trace length")
    if window < 1:
        raise ValueError("window must be >= 1")
    for k in range(window, len(costs) + 1):
        win = costs[k - window:k]
        if win.max() - win.min() < tol:
            return True, k
    return False, None


def _equilibrium_flows(net, tail_flows, tail_ok):
    if not tail_ok.any():
        return None
    return cancel_free_cycles(net, tail_flows[tail_ok].mean(axis=0))


def _play(config: GameConfig, net: RoutingNetwork, seeds, keep_traces: bool):
    """Advance many independently seeded runs in lockstep.

    Every run follows the identical per-seed arithmetic (all batch
    operations are elementwise per row), so results do not depend on how
    runs are grouped.  Per-iteration traces are retained only when
    ``keep_traces`` is set; ensembles keep summaries to bound memory.
    """
    k = net.n_decisions
    n_edges = len(net.edges)
    n_seeds = len(seeds)
    cap = config.iterations
    win = config.convergence_window
    sign = -1.0 if config.step_sign == "paper" else 1.0
    nprobe = 3 * k
    m = np.arange(nprobe)
    params = np.stack([
        np.random.default_rng(s).uniform(0.0, 2.0 * math.pi, size=(k, 3))
        for s in seeds])
    costs = np.full((cap, n_seeds), np.nan)
    ring_flows = np.full((win, n_seeds, n_edges), np.nan)
    ring_ok = np.zeros((win, n_seeds), dtype=bool)
    if keep_traces:
        tr_strat = np.empty((cap, n_seeds, k, 3))
        tr_marg = np.empty((cap, n_seeds, k))
        tr_flows = np.empty((cap, n_seeds, n_edges))
        tr_local = np.empty((cap, n_seeds, k))
        tr_div = np.empty((cap, n_seeds), dtype=bool)
    active = np.ones(n_seeds, dtype=bool)
    stop_at = np.full(n_seeds, cap, dtype=int)
    t = 0
    while t < cap and active.any():
        idx = np.flatnonzero(active)
        base = params[idx]
        batch = np.repeat(base[:, None], 1 + nprobe, axis=1)
        batch[:, 1 + m, m // 3, m % 3] += config.fd_step
        marg, fl, lam, lat, ct, ok = _pipeline_batch(
            batch.reshape(-1, k, 3), config.gamma, net, config.penalty_cost)
        lc = _local_costs_batch(net, config.objective_mode, marg, fl, lam, lat,
                                ok, config.penalty_cost)
        a = idx.size
        marg = marg.reshape(a, 1 + nprobe, k)
        fl = fl.reshape(a, 1 + nprobe, n_edges)
        ct = ct.reshape(a, 1 + nprobe)
        ok = ok.reshape(a, 1 + nprobe)
        lc = lc.reshape(a, 1 + nprobe, k)
        costs[t, idx] = ct[:, 0]
        ring_flows[t % win, idx] = fl[:, 0]
        ring_ok[t % win, idx] = ok[:, 0]
        if keep_traces:
            tr_strat[t, idx] = base
            tr_marg[t, idx] = marg[:, 0]
            tr_flows[t, idx] = fl[:, 0]
            tr_local[t, idx] = lc[:, 0]
            tr_div[t, idx] = ~ok[:, 0]
        pert = lc[:, 1 + m, m // 3].reshape(a, k, 3)
        params[idx] = base + sign * config.gain * (lc[:, 0, :, None] - pert)
        t += 1
        if config.stop_on_convergence and t >= win:
            w = costs[t - win:t][:, idx]
            flat = (w.max(axis=0) - w.min(axis=0)) < config.convergence_tol
            active[idx[flat]] = False
            stop_at[idx[flat]] = t
    results = []
    for si, seed in enumerate(seeds):
        stop = int(stop_at[si]) if not active[si] else min(t, cap)
        series = costs[:stop, si]
        wlen = min(win, stop)
        converged, at = detect_convergence(series, wlen, config.convergence_tol)
        eq_cost = float(series[-wlen:].mean())
        if stop >= win:
            order = (np.arange(win) + stop) % win  # chronological ring order
        else:
            order = np.arange(stop)
        tail_flows = ring_flows[order, si][-wlen:]
        tail_ok = ring_ok[order, si][-wlen:]
        eq_flows = _equilibrium_flows(net, tail_flows, tail_ok)
        if keep_traces:
            results.append(RunTrace(
                config=config.with_(seed=seed), network=net,
                strategies=tr_strat[:stop, si].copy(),
                marginals=tr_marg[:stop, si].copy(),
                flows=tr_flows[:stop, si].copy(),
                local_costs=tr_local[:stop, si].copy(),
                total_costs=series.copy(), diverged=tr_div[:stop, si].copy(),
                final_strategies=params[si], converged=converged,
                converged_at=at, equilibrium_cost=eq_cost,
                equilibrium_flows=eq_flows))
        else:
            results.append(RunSummary(
                seed=seed, iterations_run=stop, converged=converged,
                converged_at=at, equilibrium_cost=eq_cost,
                equilibrium_flows=eq_flows, final_strategies=params[si]))
    return results


def run_repeated_game(config: GameConfig, net: RoutingNetwork) -> RunTrace:
    """Play one repeated game from a seeded random strategy profile.

    All angles start uniform in [0, 2*pi).  Each round evaluates the base
    profile plus one forward-shifted probe per angle (3K + 1 pipeline
    evaluations, batched) and updates all angles simultaneously.  With
    ``stop_on_convergence`` the loop ends as soon as the trailing cost
    window is flat to ``convergence_tol``; otherwise it always runs
    ``iterations`` rounds.
    """
    return _play(config, net, [config.seed], keep_traces=True)[0]


def run_ensemble(config: GameConfig, net: RoutingNetwork, n_seeds: int,
                 seed0: Optional[int] = None) -> list:
    """Summaries of n_seeds independent runs seeded seed0 .. seed0+n-1."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    first = config.seed if seed0 is None else seed0
    return _play(config, net, list(range(first, first + n_seeds)), keep_traces=False)
