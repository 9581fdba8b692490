"""Optimal-basis identification by sequential deletion, plus verification and hardness probes.

Column deletions are permanent: once the restricted value matches the full
value the column never re-enters. Rows are then thinned through the restricted
dual until exactly |I| supporting rows remain, keeping the square submatrix
nonsingular throughout. The sample-based variant swaps exact equality tests
for estimation-gap thresholds and the rank test for a singular-value margin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import (
    ConfidenceParams,
    EmpiricalEstimates,
    build_empirical_lp,
    collect_uniform,
    gaps,
    rad,
)
from .instances import CmdpInstance, RngHandle
from .lp import (
    BasisPair,
    StandardLp,
    smallest_singular_value,
    solve_restricted_dual,
    solve_restricted_primal,
    solve_square_system,
)

__all__ = [
    "BasisReport",
    "HardnessConstants",
    "DoublingResult",
    "identify_basis_true",
    "identify_basis_empirical",
    "identify_basis_doubling",
    "verify_basis",
    "hardness_constants",
    "export_basis_json",
]

RANK_TOL = 1e-9
VALUE_TOL_SCALE = 1e-7


class BasisIdentificationError(RuntimeError):
    """Row thinning failed to reach |J| = |I| on the exact LP (tolerance misconfiguration)."""


def _value_tol(value: float) -> float:
    return VALUE_TOL_SCALE * (1.0 + abs(value))


def identify_basis_true(lp: StandardLp, trace: list | None = None) -> BasisPair:
    """Identify one optimal basis of the exact LP by sequential deletion.

    Columns are scanned in ascending label order, rows cost-first then flow.
    Deterministic: a rerun on the same LP returns the identical pair.
    """
    base = solve_restricted_primal(lp)
    if not base.optimal:
        raise ValueError(f"LP must be feasible and bounded, got status {base.status}")
    v_full = base.value
    tol = _value_tol(v_full)

    all_cols = list(range(lp.num_cols))
    kept = set(all_cols)
    for i in all_cols:
        trial_fixed = sorted(set(all_cols) - (kept - {i}))
        sol = solve_restricted_primal(lp, fixed_zero=trial_fixed)
        drop = sol.optimal and abs(sol.value - v_full) <= tol
        if trace is not None:
            trace.append({"phase": "col", "candidate": i, "value": sol.value,
                          "dropped": drop, "status": sol.status})
        if drop:
            kept.discard(i)
    cols = sorted(kept)

    j1 = list(range(lp.num_cost_rows))
    j2 = list(range(lp.num_flow_rows))
    for kind, j in [("cost", k) for k in range(lp.num_cost_rows)] + \
                   [("flow", s) for s in range(lp.num_flow_rows)]:
        if len(j1) + len(j2) == len(cols):
            break
        t1 = [k for k in j1 if not (kind == "cost" and k == j)]
        t2 = [s for s in j2 if not (kind == "flow" and s == j)]
        dsol = solve_restricted_dual(lp, cols, (t1, t2))
        sigma = smallest_singular_value(_submatrix(lp.cost_matrix, lp.flow_matrix, t1, t2, cols)) \
            if cols else 0.0
        drop = dsol.optimal and abs(dsol.value - v_full) <= tol and sigma > RANK_TOL
        if trace is not None:
            trace.append({"phase": "row", "candidate": (kind, j), "value": dsol.value,
                          "dropped": drop, "sigma": sigma, "status": dsol.status})
        if drop:
            j1, j2 = t1, t2
    if len(j1) + len(j2) != len(cols):
        raise BasisIdentificationError(
            f"row thinning stopped at |J|={len(j1) + len(j2)} != |I|={len(cols)}")
    return BasisPair(cols=tuple(cols), rows_cost=tuple(j1), rows_flow=tuple(j2))


def identify_basis_empirical(
    est: EmpiricalEstimates,
    params: ConfidenceParams,
    gamma: float,
    budgets: np.ndarray,
    init_dist: np.ndarray,
    scale: float = 1.0,
    trace: list | None = None,
) -> BasisPair:
    """Sample-based basis identification with estimation-gap thresholds.

    Every restricted LP carries slack rad * scale; a candidate column drops
    when the value change stays within 2 Gap1 + 2 Gap2 and a candidate row
    drops when additionally the empirical submatrix keeps a singular-value
    margin of |J'| |I| rad * scale. Below the sample threshold of the theory
    the output may disagree with the exact basis and may not be square.
    """
    if est.missing_pairs():
        raise ValueError(f"uncovered state-action pairs: {est.missing_pairs()}")
    n0, eps = params.n0, params.epsilon
    radius = rad(n0, eps) * scale
    lp = build_empirical_lp(est, gamma, budgets, init_dist, lam=radius)
    k_rows = lp.num_cost_rows
    min_budget = float(np.min(lp.budgets)) if k_rows else math.inf
    gap1, gap2 = gaps(n0, eps, est.num_states, gamma, min_budget, k_rows, scale)
    thresh = 2.0 * (gap1 + gap2)

    base = solve_restricted_primal(lp)
    if not base.optimal:
        raise ValueError(f"empirical LP not solvable, status {base.status}")
    v_bar = base.value

    all_cols = list(range(lp.num_cols))
    kept = set(all_cols)
    for i in all_cols:
        trial_fixed = sorted(set(all_cols) - (kept - {i}))
        sol = solve_restricted_primal(lp, fixed_zero=trial_fixed)
        drop = sol.optimal and abs(sol.value - v_bar) <= thresh
        if trace is not None:
            trace.append({"phase": "col", "candidate": i, "value": sol.value,
                          "dropped": drop, "status": sol.status})
        if drop:
            kept.discard(i)
    cols = sorted(kept)

    j1 = list(range(k_rows))
    j2 = list(range(lp.num_flow_rows))
    fixed = sorted(set(all_cols) - set(cols))
    for kind, j in [("cost", k) for k in range(k_rows)] + \
                   [("flow", s) for s in range(lp.num_flow_rows)]:
        if len(j1) + len(j2) == len(cols):
            break
        t1 = [k for k in j1 if not (kind == "cost" and k == j)]
        t2 = [s for s in j2 if not (kind == "flow" and s == j)]
        dsol = solve_restricted_primal(lp, fixed_zero=fixed, row_subset=(t1, t2))
        sub = _submatrix(lp.cost_matrix, lp.flow_matrix, t1, t2, cols)
        sigma = smallest_singular_value(sub) if cols else 0.0
        margin = len(cols) * (len(t1) + len(t2)) * radius
        drop = dsol.optimal and abs(dsol.value - v_bar) <= thresh and sigma >= margin
        if trace is not None:
            trace.append({"phase": "row", "candidate": (kind, j), "value": dsol.value,
                          "dropped": drop, "sigma": sigma, "margin": margin,
                          "rows": (tuple(t1), tuple(t2)), "cols": tuple(cols),
                          "status": dsol.status})
        if drop:
            j1, j2 = t1, t2
    return BasisPair(cols=tuple(cols), rows_cost=tuple(j1), rows_flow=tuple(j2))


@dataclass
class DoublingResult:
    basis: BasisPair
    n0_final: int
    samples_used: int
    attempts: int
    converged: bool
    estimates: EmpiricalEstimates


def identify_basis_doubling(
    instance: CmdpInstance,
    rng: RngHandle,
    epsilon: float,
    n0_start: int = 256,
    sample_budget: int = 2**20,
    est: EmpiricalEstimates | None = None,
) -> DoublingResult:
    """Double the per-pair sample count until two consecutive identifications agree.

    Samples accumulate across rounds. Agreement requires identical index sets
    and a square pair (|I| = |J|); the budget caps total generative queries,
    and on exhaustion the last pair is returned flagged unconverged.
    """
    S, A = instance.num_states, instance.num_actions
    pair_cost = S * A
    if est is None:
        est = EmpiricalEstimates(S, A, instance.num_constraints)
    used = int(est.counts.sum())
    n0 = n0_start
    prev: BasisPair | None = None
    last: BasisPair | None = None
    attempts = 0
    while True:
        need = n0 - est.min_count()
        if need > 0:
            if used + need * pair_cost > sample_budget and attempts > 0:
                return DoublingResult(basis=last, n0_final=n0 // 2, samples_used=used,
                                      attempts=attempts, converged=False, estimates=est)
            collect_uniform(instance, need, rng, est)
            used += need * pair_cost
        params = ConfidenceParams(epsilon=epsilon, n0=n0)
        pair = identify_basis_empirical(
            est, params, gamma=instance.gamma, budgets=instance.budgets,
            init_dist=instance.init_dist, scale=instance.scale)
        attempts += 1
        square = pair.size == len(pair.rows_cost) + len(pair.rows_flow)
        if prev is not None and square and pair == prev:
            return DoublingResult(basis=pair, n0_final=n0, samples_used=used,
                                  attempts=attempts, converged=True, estimates=est)
        prev, last = pair, pair
        n0 *= 2


@dataclass
class BasisReport:
    passed: bool
    reason: str
    sigma_min: float
    value: float | None = None
    q: np.ndarray | None = None


def verify_basis(lp: StandardLp, basis: BasisPair) -> BasisReport:
    """Check that the pair pins a strictly positive, feasible, optimal solution."""
    m = len(basis.rows_cost) + len(basis.rows_flow)
    if m != basis.size or basis.size == 0:
        return BasisReport(passed=False, reason="cardinality |I| != |J1| + |J2|", sigma_min=0.0)
    a_star = basis.matrix(lp)
    sigma = smallest_singular_value(a_star)
    if sigma <= RANK_TOL:
        return BasisReport(passed=False, reason="singular basis matrix", sigma_min=sigma)
    try:
        q_basic = solve_square_system(a_star, basis.rhs(lp))
    except Exception:
        return BasisReport(passed=False, reason="singular basis matrix", sigma_min=sigma)
    if np.min(q_basic) <= RANK_TOL:
        return BasisReport(passed=False, reason="basic variable not strictly positive",
                           sigma_min=sigma, q=q_basic)
    q = np.zeros(lp.num_cols)
    q[list(basis.cols)] = q_basic
    slack_tol = 1e-9 * (1.0 + float(np.max(np.abs(lp.budgets), initial=0.0)))
    if lp.num_cost_rows and np.max(lp.cost_matrix @ q - lp.budgets) > slack_tol:
        return BasisReport(passed=False, reason="cost constraint violated", sigma_min=sigma, q=q)
    flow_tol = 1e-9 * (1.0 + float(np.max(np.abs(lp.flow_rhs))))
    if np.max(np.abs(lp.flow_matrix @ q - lp.flow_rhs)) > flow_tol:
        return BasisReport(passed=False, reason="flow constraint violated", sigma_min=sigma, q=q)
    sol = solve_restricted_primal(lp)
    value = float(lp.objective @ q)
    if abs(value - sol.value) > _value_tol(sol.value):
        return BasisReport(passed=False, reason="objective differs from the LP optimum",
                           sigma_min=sigma, value=value, q=q)
    return BasisReport(passed=True, reason="", sigma_min=sigma, value=value, q=q)


@dataclass
class HardnessConstants:
    delta1: float
    delta2: float
    sigma0: float
    sigma_star: float
    exhaustive: bool = True


def hardness_constants(lp: StandardLp, limit: int = 10000) -> HardnessConstants:
    """Instance hardness from single-column deletions and the identification path.

    delta1: smallest positive value drop over single-column deletions from the
    full set plus the path's downward-closed deletions; delta2: smallest
    positive dual rise among the row deletions tested; sigma0: smallest
    positive singular value among full-rank submatrices seen; sigma_star:
    singular value of the identified basis matrix. limit caps the number of
    restricted solves; exceeding it flags the result non-exhaustive.
    """
    trace: list = []
    budget = 2 * lp.num_cols + lp.num_cost_rows + lp.num_flow_rows + 2
    exhaustive = budget <= limit
    basis = identify_basis_true(lp, trace=trace)
    base = solve_restricted_primal(lp)
    v_full = base.value

    delta1 = math.inf
    delta2 = math.inf
    sigma0 = math.inf
    solves = len(trace) + 1
    for event in trace:
        if event["phase"] == "col":
            if event["status"] == "optimal":
                gap = v_full - event["value"]
                if gap > _value_tol(v_full):
                    delta1 = min(delta1, gap)
        else:
            if event["status"] == "optimal":
                gap = event["value"] - v_full
                if gap > _value_tol(v_full):
                    delta2 = min(delta2, gap)
            if event["sigma"] > RANK_TOL:
                sigma0 = min(sigma0, event["sigma"])
    for i in range(lp.num_cols):
        if solves >= limit:
            exhaustive = False
            break
        sol = solve_restricted_primal(lp, fixed_zero=[i])
        solves += 1
        if sol.optimal:
            gap = v_full - sol.value
            if gap > _value_tol(v_full):
                delta1 = min(delta1, gap)
    sigma_star = smallest_singular_value(basis.matrix(lp))
    sigma0 = min(sigma0, sigma_star)
    return HardnessConstants(delta1=delta1, delta2=delta2, sigma0=sigma0,
                             sigma_star=sigma_star, exhaustive=exhaustive)


def export_basis_json(lp: StandardLp, basis: BasisPair) -> str:
    return json.dumps(basis.to_json_dict(lp))


def _submatrix(cost_matrix, flow_matrix, j1, j2, cols):
    parts = []
    if j1:
        parts.append(cost_matrix[np.ix_(j1, cols)])
    if j2:
        parts.append(flow_matrix[np.ix_(j2, cols)])
    if not parts:
        return np.zeros((0, len(cols)))
    return np.vstack(parts)
