"""Replicated learning-run experiments with deterministic seeding and CSV emission."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .basis import identify_basis_true
from .evaluation import ValueReport, evaluate_exact, regret_report
from .instances import CmdpInstance, RngHandle
from .lp import BasisPair, build_infinite_lp, extract_policy, solve_restricted_primal
from .resolving import run_adaptive_resolving, run_offpolicy, run_onpolicy

__all__ = ["ReplicateRow", "ExperimentResult", "run_replicates", "CSV_HEADER"]

CSV_HEADER = ["mode", "N", "replicate", "err_l1", "regret_r", "regret_k_max",
              "samples_used", "wall_ms"]


@dataclass
class ReplicateRow:
    mode: str
    n: int
    replicate: int
    err_l1: float | None
    regret_r: float | None
    regret_k_max: float | None
    samples_used: int | None
    wall_ms: int
    error: str | None = None


@dataclass
class ExperimentResult:
    rows: list
    summary: dict  # n -> mean err over successful replicates

    def mean_err(self, n: int) -> float:
        return self.summary[n]


def _child_seeds(seed: int, count: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def _run_one(payload: dict) -> ReplicateRow:
    instance = CmdpInstance.from_dict(payload["instance"])
    mode = payload["mode"]
    n = payload["n"]
    rng = RngHandle(payload["seed"])
    basis = None
    if payload["basis"] is not None:
        cols, rc, rf = payload["basis"]
        basis = BasisPair(cols=tuple(cols), rows_cost=tuple(rc), rows_flow=tuple(rf))
    start = time.perf_counter()
    try:
        if mode == "generative":
            out = run_adaptive_resolving(instance, payload["n1"], n, payload["epsilon"],
                                         rng, basis_mode=payload["basis_mode"], basis=basis)
        elif mode == "offpolicy":
            behavior = extract_policy(np.ones(instance.num_states * instance.num_actions),
                                      instance.num_states, instance.num_actions)
            out = run_offpolicy(instance, behavior, payload["n1"], n, payload["epsilon"],
                                rng, basis_mode=payload["basis_mode"], basis=basis)
        elif mode == "onpolicy":
            out = run_onpolicy(instance, payload["n1"] * instance.num_states * instance.num_actions,
                               n, payload["n3"], payload["epsilon"], rng,
                               xi_prime=payload["xi_prime"],
                               basis_mode=payload["basis_mode"], basis=basis)
        else:
            raise ValueError(f"unknown mode {mode!r}")
    except Exception as exc:  # per-replicate failures are recorded, the run continues
        return ReplicateRow(mode=mode, n=n, replicate=payload["replicate"],
                            err_l1=None, regret_r=None, regret_k_max=None,
                            samples_used=None, wall_ms=0, error=f"{type(exc).__name__}: {exc}")
    wall_ms = int(round(1000.0 * (time.perf_counter() - start))) if payload["timing"] else 0
    q_star = np.asarray(payload["q_star"])
    err = float(np.abs(out.q_bar - q_star).sum() / np.abs(q_star).sum())
    opt = ValueReport(v_reward=payload["opt_v_reward"], v_costs=np.asarray(payload["opt_v_costs"]))
    reg = regret_report(instance, out.policy, opt)
    reg_k = float(np.max(reg["regret_k"])) if instance.num_constraints else None
    return ReplicateRow(mode=mode, n=n, replicate=payload["replicate"],
                        err_l1=err, regret_r=float(reg["regret_r"]), regret_k_max=reg_k,
                        samples_used=out.samples_used, wall_ms=wall_ms)


def run_replicates(
    instance: CmdpInstance,
    mode: str,
    n_grid,
    replicates: int,
    seed: int,
    n1: int = 1000,
    epsilon_target: float = 0.1,
    basis_mode: str = "true",
    jobs: int = 1,
    n3: int = 1000,
    xi_prime: float | None = None,
    timing: bool = False,
) -> ExperimentResult:
    """Run `replicates` seeded learning runs per grid point and score against the true optimum.

    Output row order is deterministic in (N, replicate) regardless of jobs.
    With basis_mode "true" the exact-LP basis is identified once and shared.
    """
    lp = build_infinite_lp(instance)
    sol = solve_restricted_primal(lp)
    if not sol.optimal:
        raise ValueError(f"instance LP not solvable: status {sol.status}")
    q_star = sol.q
    opt_policy = extract_policy(q_star, instance.num_states, instance.num_actions)
    opt_report = evaluate_exact(instance, opt_policy)
    basis = None
    if basis_mode == "true":
        pair = identify_basis_true(lp)
        basis = (list(pair.cols), list(pair.rows_cost), list(pair.rows_flow))

    n_grid = list(n_grid)
    seeds = _child_seeds(seed, len(n_grid) * replicates)
    payloads = []
    for gi, n in enumerate(n_grid):
        for m in range(replicates):
            payloads.append({
                "instance": instance.to_dict(), "mode": mode, "n": int(n),
                "replicate": m, "seed": seeds[gi * replicates + m], "n1": n1,
                "epsilon": epsilon_target, "basis_mode": basis_mode, "basis": basis,
                "n3": n3, "xi_prime": xi_prime, "timing": timing,
                "q_star": q_star.tolist(), "opt_v_reward": opt_report.v_reward,
                "opt_v_costs": opt_report.v_costs.tolist(),
            })
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, payloads, chunksize=1))
    else:
        rows = [_run_one(p) for p in payloads]
    rows.sort(key=lambda r: (n_grid.index(r.n), r.replicate))
    summary = {}
    for n in n_grid:
        errs = [r.err_l1 for r in rows if r.n == n and r.err_l1 is not None]
        summary[int(n)] = float(np.mean(errs)) if errs else float("nan")
    return ExperimentResult(rows=rows, summary=summary)


def write_experiment_csv(result: ExperimentResult, path, n_grid) -> None:
    """Versioned CSV: replicate rows then one summary row per N, 10 significant digits."""

    def fmt(x):
        return "" if x is None else f"{x:.10g}"

    lines = ["# schema=1", ",".join(CSV_HEADER)]
    for row in result.rows:
        if row.error is not None:
            lines.append(f"# error mode={row.mode} N={row.n} replicate={row.replicate}: {row.error}")
        lines.append(",".join([
            row.mode, str(row.n), str(row.replicate), fmt(row.err_l1),
            fmt(row.regret_r), fmt(row.regret_k_max),
            "" if row.samples_used is None else str(row.samples_used), str(row.wall_ms),
        ]))
    mode = result.rows[0].mode if result.rows else ""
    for n in n_grid:
        lines.append(",".join([mode, str(n), "summary", fmt(result.summary[int(n)]),
                               "", "", "", ""]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
