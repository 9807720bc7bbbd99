"""Command-line interface.

Subcommands: ``run`` (single trace), ``sweep`` (entanglement grid),
``ensemble`` (seed batch), ``classical`` (equilibrium/optimum/kappa for a
network file) and ``compare`` (latency-variant report).  Configuration
precedence: --config file (or --preset, or the subcommand default), then
explicit flags on top.  Exit code 0 on success, 1 with a diagnostic on
stderr on any error.
"""
from __future__ import annotations

import argparse
import math
import sys

from .dynamics import OBJECTIVE_MODES, STEP_SIGNS, GameConfig, run_repeated_game
from .experiments import (DEFAULT_SWEEP_POINTS, PRESETS, anchor_config,
                          classical_report, default_gamma_grid, emit,
                          ensemble, gamma_sweep, parse_config, parse_network,
                          refined_config, render, variant_comparison)
from .network import make_braess

_FLAG_FIELDS = (
    ("gamma", "gamma"), ("gain", "gain"), ("fd_step", "fd_step"),
    ("iters", "iterations"), ("seed", "seed"), ("mode", "objective_mode"),
    ("sign", "step_sign"), ("stop_on_convergence", "stop_on_convergence"),
)


def _add_config_flags(p: argparse.ArgumentParser, seed_flag: bool = False):
    p.add_argument("--preset", choices=sorted(PRESETS), help="named calibrated configuration")
    p.add_argument("--config", metavar="FILE", help="config file in the text grammar")
    p.add_argument("--gamma", type=float, help="entangling parameter (radians)")
    p.add_argument("--gain", type=float, help="learning gain M")
    p.add_argument("--fd-step", type=float, dest="fd_step", help="finite-difference probe d")
    p.add_argument("--iters", type=int, help="iteration count (cap when stopping on convergence)")
    p.add_argument("--mode", choices=OBJECTIVE_MODES, help="local cost reading")
    p.add_argument("--sign", choices=STEP_SIGNS, help="update sign")
    p.add_argument("--stop-on-convergence", action="store_true", default=None,
                   help="stop once the cost window is flat")
    p.add_argument("--network", metavar="FILE", help="network file (default: canonical Braess)")
    p.add_argument("--out", metavar="PATH", help="write the result here")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    if seed_flag:
        p.add_argument("--seed", type=int, help="run seed")


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _build_config(args, default: GameConfig) -> GameConfig:
    if args.config:
        cfg = parse_config(_read(args.config))
    elif args.preset:
        cfg = PRESETS[args.preset]()
    else:
        cfg = default
    overrides = {}
    for flag, field in _FLAG_FIELDS:
        v = getattr(args, flag, None)
        if v is not None:
            overrides[field] = v
    return cfg.with_(**overrides) if overrides else cfg


def _network(args):
    return parse_network(_read(args.network)) if args.network else make_braess()


def _deliver(result, args, summary: str):
    if args.out:
        emit(result, args.format, args.out)
        print(f"{summary} -> {args.out}")
    else:
        sys.stdout.write(render(result, args.format))


def cmd_run(args) -> int:
    cfg = _build_config(args, GameConfig())
    trace = run_repeated_game(cfg, _network(args))
    state = f"converged@{trace.converged_at}" if trace.converged else "not converged"
    _deliver(trace, args, f"run seed={cfg.seed}: equilibrium cost "
                          f"{trace.equilibrium_cost:.6g} ({state})")
    return 0


def cmd_sweep(args) -> int:
    cfg = _build_config(args, anchor_config())
    res = gamma_sweep(cfg, _network(args), default_gamma_grid(args.points),
                      seeds_per_point=args.seeds)
    dip = min(res.rows, key=lambda r: r.median_cost)
    _deliver(res, args, f"sweep {len(res.rows)} points: min median cost "
                        f"{dip.median_cost:.6g} at gamma={dip.gamma:.6g}")
    return 0


def cmd_ensemble(args) -> int:
    cfg = _build_config(args, refined_config())
    res = ensemble(cfg, _network(args), args.seeds, seed0=args.seed0)
    costs = [r.equilibrium_cost for r in res.rows]
    costs.sort()
    med = costs[len(costs) // 2]
    _deliver(res, args, f"ensemble of {args.seeds}: median equilibrium cost {med:.6g}")
    return 0


def cmd_classical(args) -> int:
    rep = classical_report(_network(args))
    _deliver(rep, args, f"equilibrium {rep.equilibrium_cost:.6g}, optimum "
                        f"{rep.optimal_cost:.6g}, kappa {rep.kappa:.6g}")
    return 0


def cmd_compare(args) -> int:
    cfg = _build_config(args, anchor_config(gamma=math.pi / 4))
    rep = variant_comparison(config=cfg, n_seeds=args.seeds)
    worst = max(rep.rows, key=lambda r: r.kappa_q)
    _deliver(rep, args, f"compared {len(rep.rows)} variants; max kappa_q "
                        f"{worst.kappa_q:.6g} ({worst.name})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qrouting",
                                 description="entangled selfish-routing experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one repeated game, full trace")
    _add_config_flags(p, seed_flag=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="equilibrium cost across the entanglement grid")
    _add_config_flags(p)
    p.add_argument("--points", type=int, default=DEFAULT_SWEEP_POINTS,
                   help="grid points on [0, pi/2]")
    p.add_argument("--seeds", type=int, default=10, help="seeds per grid point")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ensemble", help="many seeds at one gamma")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=20, help="number of seeds")
    p.add_argument("--seed0", type=int, default=None, help="first seed")
    p.set_defaults(fn=cmd_ensemble)

    p = sub.add_parser("classical", help="classical equilibrium, optimum and kappa")
    p.add_argument("--network", metavar="FILE", help="network file (default: canonical Braess)")
    p.add_argument("--out", metavar="PATH")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(fn=cmd_classical)

    p = sub.add_parser("compare", help="latency-variant study")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=10, help="seeds per variant")
    p.set_defaults(fn=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"qrouting: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
