"""Command-line driver: instance generation, exact solving, and learning experiments.

Exit codes: 0 success, 2 usage, 3 infeasible or bad data, 4 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .basis import export_basis_json, hardness_constants, identify_basis_true
from .evaluation import evaluate_exact, value_iteration
from .experiments import run_replicates, write_experiment_csv
from .instances import load_instance, random_instance, save_instance
from .lp import build_infinite_lp, extract_policy, smallest_singular_value, solve_restricted_primal
from .resolving import CoverageError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

# Defaults follow the reference numerical-study recipe.
GEN_DEFAULTS = {"states": 10, "actions": 10, "gamma": 0.7, "k": 5, "noise": 0.5}


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags beat config-file values beat built-in defaults."""
    config = {}
    if getattr(args, "config", None):
        config = json.loads(open(args.config).read())
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else config.get(key, default)
    return out


def cmd_gen(args) -> int:
    cfg = _merged(args, {**GEN_DEFAULTS, "seed": None})
    if cfg["seed"] is None:
        print("error: --seed is required", file=sys.stderr)
        return EXIT_USAGE
    instance = random_instance(
        num_states=int(cfg["states"]), num_actions=int(cfg["actions"]),
        gamma=float(cfg["gamma"]), num_constraints=int(cfg["k"]),
        seed=int(cfg["seed"]), noise=float(cfg["noise"]))
    save_instance(instance, args.out)
    print(f"wrote {args.out} (seed={int(cfg['seed'])})")
    return EXIT_OK


def cmd_solve(args) -> int:
    instance = load_instance(args.instance)
    lp = build_infinite_lp(instance)
    sol = solve_restricted_primal(lp)
    if not sol.optimal:
        print(f"error: LP status {sol.status}", file=sys.stderr)
        return EXIT_DATA
    gamma = instance.gamma
    policy = extract_policy(sol.q, instance.num_states, instance.num_actions)
    report = evaluate_exact(instance, policy)
    print(f"instance: S={instance.num_states} A={instance.num_actions} "
          f"K={instance.num_constraints} gamma={gamma:.10g}")
    print(f"lp_value = {sol.value:.10g}")
    print(f"v_reward_opt = {report.v_reward:.10g}")
    binding = [k for k in range(lp.num_cost_rows)
               if lp.cost_matrix[k] @ sol.q >= lp.budgets[k] - 1e-7 * (1 + abs(lp.budgets[k]))]
    print(f"binding_constraints = {binding}")
    basis = identify_basis_true(lp)
    print(f"basis = {export_basis_json(lp, basis)}")
    if instance.num_states * instance.num_actions <= 12:
        hc = hardness_constants(lp)
        print(f"hardness: delta1={hc.delta1:.10g} delta2={hc.delta2:.10g} "
              f"sigma0={hc.sigma0:.10g} sigma_star={hc.sigma_star:.10g}")
    else:
        sigma_star = smallest_singular_value(basis.matrix(lp))
        print(f"hardness: skipped (|S||A| > 12); sigma_star={sigma_star:.10g}")
    if args.check_vi:
        if instance.num_constraints:
            print("check-vi: skipped (value iteration ignores cost constraints; K > 0)")
        else:
            _, vi_opt = value_iteration(instance)
            gap = abs(sol.value - (1.0 - gamma) * vi_opt)
            print(f"check-vi: lp={sol.value:.10g} (1-gamma)*vi={(1.0 - gamma) * vi_opt:.10g} "
                  f"gap={gap:.3e}")
            if gap > 1e-6:
                print("error: value-iteration cross-check failed", file=sys.stderr)
                return EXIT_INTERNAL
    return EXIT_OK


def cmd_experiment(args) -> int:
    instance = load_instance(args.instance)
    n_grid = [int(x) for x in args.n.split(",")]
    result = run_replicates(
        instance, mode=args.mode, n_grid=n_grid, replicates=args.replicates,
        seed=args.seed, n1=args.n1, epsilon_target=args.epsilon,
        basis_mode=args.basis_mode, jobs=args.jobs, n3=args.n3,
        xi_prime=args.xi_prime, timing=args.timing)
    write_experiment_csv(result, args.out, n_grid)
    for n in n_grid:
        print(f"N={n} mean_err={result.summary[n]:.10g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdplp",
                                     description="Occupancy-LP learning pipeline for constrained MDPs")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a random instance file")
    gen.add_argument("--states", type=int)
    gen.add_argument("--actions", type=int)
    gen.add_argument("--gamma", type=float, required=True)
    gen.add_argument("--k", type=int)
    gen.add_argument("--noise", type=float)
    gen.add_argument("--seed", type=int)
    gen.add_argument("--config", type=str)
    gen.add_argument("-o", "--out", required=True)
    gen.set_defaults(func=cmd_gen)

    solve = sub.add_parser("solve", help="solve the exact occupancy LP of an instance")
    solve.add_argument("instance")
    solve.add_argument("--check-vi", action="store_true", dest="check_vi")
    solve.set_defaults(func=cmd_solve)

    exp = sub.add_parser("experiment", help="replicated learning runs, CSV output")
    exp.add_argument("--instance", required=True)
    exp.add_argument("--mode", choices=["generative", "offpolicy", "onpolicy"],
                     default="generative")
    exp.add_argument("--n", required=True, help="comma-separated resolving-round grid")
    exp.add_argument("--replicates", "-m", type=int, default=50)
    exp.add_argument("--seed", type=int, required=True)
    exp.add_argument("--n1", type=int, default=1000)
    exp.add_argument("--epsilon", type=float, default=0.1)
    exp.add_argument("--basis-mode", choices=["true", "empirical", "doubling"],
                     default="true", dest="basis_mode")
    exp.add_argument("--n3", type=int, default=1000)
    exp.add_argument("--xi-prime", type=float, default=None, dest="xi_prime")
    exp.add_argument("--jobs", type=int, default=1)
    exp.add_argument("--timing", action="store_true",
                     help="fill wall_ms with measured times (breaks byte determinism)")
    exp.add_argument("--out", "-o", required=True)
    exp.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, json.JSONDecodeError, CoverageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
