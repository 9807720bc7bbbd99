"""Entangled selfish routing on congestion networks.

Decision nodes of a Braess-type network each hold one qubit of a shared
entangled state; measured marginals become routing fractions, and a
repeated game of finite-difference strategy updates drives the flow to an
equilibrium whose cost depends on the amount of entanglement.
"""
from .quantum import (QuantumState, StrategyParams, apply_entangler,
                      apply_local_unitaries, final_state, marginals,
                      strategy_unitary)
from .network import (DecisionNode, Edge, LatencyFn, LoopDivergence,
                      RoutingNetwork, SearchResult, beckmann_potential,
                      cancel_free_cycles, classical_equilibrium,
                      is_diagonally_symmetric, is_mirror_symmetric,
                      make_braess, optimal_flow, option_latencies,
                      price_of_anarchy, solve_flows, total_cost)
from .dynamics import (Evaluation, GameConfig, RunSummary, RunTrace,
                       detect_convergence, evaluate, local_cost,
                       perturbed_cost, run_ensemble, run_repeated_game,
                       update_step)
from .experiments import (ClassicalReport, EnsembleResult, SweepResult,
                          VariantReport, anchor_config, classical_report,
                          default_gamma_grid, default_variants, emit,
                          ensemble, format_config, format_network,
                          gamma_sweep, parse_config, parse_network,
                          refined_config, render, variant_comparison)

__version__ = "0.1.0"
