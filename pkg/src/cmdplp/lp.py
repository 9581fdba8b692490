"""Standard-form occupancy LPs, restricted primal/dual solves, and small dense linear algebra.

The occupancy LP reads: max r'q  s.t.  C q <= alpha_lp,  B q = mu,  q >= 0,
with alpha_lp = (1-gamma) * value-scale budgets for the discounted build and
every feasible q summing to one. The LP objective therefore equals
(1-gamma) * V_r; value-scale comparisons divide by (1-gamma) explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .instances import CmdpInstance, EpisodicInstance

__all__ = [
    "StandardLp",
    "LpSolution",
    "BasisPair",
    "PolicyTable",
    "LpSolverError",
    "SingularSystemError",
    "build_infinite_lp",
    "build_finite_lp",
    "solve_restricted_primal",
    "solve_restricted_dual",
    "solve_square_system",
    "smallest_singular_value",
    "singular_values",
    "extract_policy",
    "export_lp_text",
]

FEASIBILITY_TOL = 1e-9

_HIGHS_OPTIONS = {
    "presolve": True,
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
}


class LpSolverError(RuntimeError):
    """Unexpected solver failure (numerical breakdown, iteration limit)."""


class SingularSystemError(RuntimeError):
    def __init__(self, message: str, sigma_min: float):
        super().__init__(message)
        self.sigma_min = sigma_min


@dataclass
class StandardLp:
    """max objective'q s.t. cost_matrix q <= budgets, flow_matrix q = flow_rhs, q >= 0."""

    objective: np.ndarray
    cost_matrix: np.ndarray
    flow_matrix: np.ndarray
    budgets: np.ndarray
    flow_rhs: np.ndarray
    col_labels: list
    row_labels: list
    slack: float = 0.0

    def __post_init__(self):
        n = self.objective.shape[0]
        if self.cost_matrix.shape != (self.num_cost_rows, n):
            raise ValueError("cost_matrix shape mismatch")
        if self.flow_matrix.shape != (self.num_flow_rows, n):
            raise ValueError("flow_matrix shape mismatch")
        if len(self.col_labels) != n:
            raise ValueError("col_labels length mismatch")

    @property
    def num_cols(self) -> int:
        return self.objective.shape[0]

    @property
    def num_cost_rows(self) -> int:
        return self.budgets.shape[0]

    @property
    def num_flow_rows(self) -> int:
        return self.flow_rhs.shape[0]


@dataclass
class LpSolution:
    value: float
    q: np.ndarray | None
    dual_y: np.ndarray | None
    dual_z: np.ndarray | None
    status: str
    dual_value: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class BasisPair:
    """Non-zero basic columns I and supporting rows J = (J1 cost, J2 flow).

    The square matrix [C(J1, I); B(J2, I)] is nonsingular and pins the optimal
    occupancy on I through a linear system; |I| = |J1| + |J2|.
    """

    cols: tuple[int, ...]
    rows_cost: tuple[int, ...]
    rows_flow: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.cols)

    def matrix(self, lp: StandardLp) -> np.ndarray:
        cols = list(self.cols)
        top = lp.cost_matrix[np.ix_(list(self.rows_cost), cols)] if self.rows_cost else np.zeros((0, len(cols)))
        bottom = lp.flow_matrix[np.ix_(list(self.rows_flow), cols)] if self.rows_flow else np.zeros((0, len(cols)))
        return np.vstack([top, bottom])

    def rhs(self, lp: StandardLp) -> np.ndarray:
        return np.concatenate([lp.budgets[list(self.rows_cost)], lp.flow_rhs[list(self.rows_flow)]])

    def to_json_dict(self, lp: StandardLp) -> dict:
        return {
            "cols": [list(lp.col_labels[i]) for i in self.cols],
            "rows_cost": [int(k) for k in self.rows_cost],
            "rows_flow": [int(j) for j in self.rows_flow],
        }


@dataclass
class PolicyTable:
    """Stationary policy probs[s, a], or probs[h, s, a] in the episodic case."""

    probs: np.ndarray
    horizon: int | None = None
    source: str = "occupancy"

    def __post_init__(self):
        sums = self.probs.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError("policy rows must be distributions")


def build_infinite_lp(instance: CmdpInstance) -> StandardLp:
    """Occupancy LP of the discounted problem; columns in (s, a) lexicographic order."""
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    gamma = instance.gamma
    delta_part = np.kron(np.eye(S), np.ones((1, A)))
    B = delta_part - gamma * instance.kernel.transpose(2, 0, 1).reshape(S, S * A)
    return StandardLp(
        objective=instance.mean_reward.reshape(-1).copy(),
        cost_matrix=instance.mean_costs.reshape(K, S * A).copy(),
        flow_matrix=B,
        budgets=(1.0 - gamma) * instance.budgets,
        flow_rhs=(1.0 - gamma) * instance.init_dist,
        col_labels=[(s, a) for s in range(S) for a in range(A)],
        row_labels=[("cost", k) for k in range(K)] + [("flow", s) for s in range(S)],
    )


def build_finite_lp(instance: EpisodicInstance) -> StandardLp:
    """Occupancy LP of the episodic problem; columns ordered period-major.

    Flow rows: sum_a q_1(s, a) = mu_1(s) for the first period, then
    sum_a q_h(s, a) - sum_{s', a'} P_{h-1}(s | s', a') q_{h-1}(s', a') = 0.
    """
    H, S, A, K = instance.horizon, instance.num_states, instance.num_actions, instance.num_constraints
    n = H * S * A
    B = np.zeros((H * S, n))
    delta_part = np.kron(np.eye(S), np.ones((1, A)))
    for h in range(H):
        B[h * S:(h + 1) * S, h * S * A:(h + 1) * S * A] = delta_part
        if h >= 1:
            prev = instance.kernels[h - 1].transpose(2, 0, 1).reshape(S, S * A)
            B[h * S:(h + 1) * S, (h - 1) * S * A:h * S * A] = -prev
    flow_rhs = np.zeros(H * S)
    flow_rhs[:S] = instance.init_dist
    return StandardLp(
        objective=instance.mean_rewards.reshape(-1).copy(),
        cost_matrix=instance.mean_costs.reshape(K, n).copy(),
        budgets=instance.budgets.copy(),
        flow_matrix=B,
        flow_rhs=flow_rhs,
        col_labels=[(s, a, h) for h in range(H) for s in range(S) for a in range(A)],
        row_labels=[("cost", k) for k in range(K)] + [("flow", s, h) for h in range(H) for s in range(S)],
    )


_STATUS = {0: "optimal", 2: "infeasible", 3: "unbounded"}


def solve_restricted_primal(
    lp: StandardLp,
    fixed_zero=(),
    row_subset=None,
    slack: float | None = None,
) -> LpSolution:
    """Solve the LP with columns in fixed_zero pinned to 0 and rows outside row_subset dropped.

    With slack lam > 0 the flow rows relax to |B q - mu|_inf <= lam and the cost
    rows to C q <= alpha + lam. row_subset is (J1, J2) index sets into the cost
    and flow rows; None keeps every row. An infeasible restriction reports
    status "infeasible" (the caller deleted too aggressively).
    """
    lam = lp.slack if slack is None else slack
    if lam < 0:
        raise ValueError("slack must be nonnegative")
    j1, j2 = _resolve_rows(lp, row_subset)
    n = lp.num_cols
    c = -lp.objective
    bounds = [(0.0, None)] * n
    for i in fixed_zero:
        bounds[i] = (0.0, 0.0)

    C1 = lp.cost_matrix[j1] if len(j1) else np.zeros((0, n))
    B2 = lp.flow_matrix[j2] if len(j2) else np.zeros((0, n))
    alpha1 = lp.budgets[j1] + lam if len(j1) else np.zeros(0)
    mu2 = lp.flow_rhs[j2] if len(j2) else np.zeros(0)

    if lam == 0.0:
        a_ub, b_ub = (C1, alpha1) if len(j1) else (None, None)
        a_eq, b_eq = (B2, mu2) if len(j2) else (None, None)
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    else:
        blocks = [m for m in (C1, B2, -B2) if m.shape[0]]
        rhs = [r for r in (alpha1, mu2 + lam, lam - mu2) if r.shape[0]]
        a_ub = np.vstack(blocks) if blocks else None
        b_ub = np.concatenate(rhs) if rhs else None
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds,
                      method="highs", options=_HIGHS_OPTIONS)

    status = _STATUS.get(res.status)
    if status is None:
        raise LpSolverError(f"LP solve failed: {res.message}")
    if status != "optimal":
        return LpSolution(value=math.nan, q=None, dual_y=None, dual_z=None, status=status)

    q = np.asarray(res.x)
    value = float(-res.fun)
    dual_y = np.zeros(lp.num_cost_rows)
    dual_z = np.zeros(lp.num_flow_rows)
    if lam == 0.0:
        if len(j1):
            dual_y[j1] = -res.ineqlin.marginals
        if len(j2):
            dual_z[j2] = -res.eqlin.marginals
        dual_value = float(lp.budgets[j1] @ dual_y[j1] + lp.flow_rhs[j2] @ dual_z[j2])
    else:
        marg = -np.asarray(res.ineqlin.marginals)
        k1 = len(j1)
        k2 = len(j2)
        y = marg[:k1]
        z_up = marg[k1:k1 + k2]
        z_lo = marg[k1 + k2:k1 + 2 * k2]
        if k1:
            dual_y[j1] = y
        if k2:
            dual_z[j2] = z_up - z_lo
        dual_value = float(alpha1 @ y + (mu2 + lam) @ z_up + (lam - mu2) @ z_lo)
    return LpSolution(value=value, q=q, dual_y=dual_y, dual_z=dual_z,
                      status="optimal", dual_value=dual_value)


def solve_restricted_dual(
    lp: StandardLp,
    cols,
    row_subset,
    slack: float = 0.0,
) -> LpSolution:
    """Value of the dual restricted to multipliers supported on (J1, J2).

    Exact form (slack 0): min alpha'y + mu'z s.t. C(:, I)'y + B(:, I)'z >= r_I
    with y >= 0 supported on J1 and z free supported on J2. With slack > 0 the
    empirical surrogate is the primal over rows (J1, J2) with that slack, whose
    value is reported as the dual estimate.
    """
    if slack > 0.0:
        fixed = [i for i in range(lp.num_cols) if i not in set(cols)]
        return solve_restricted_primal(lp, fixed_zero=fixed, row_subset=row_subset, slack=slack)

    j1, j2 = _resolve_rows(lp, row_subset)
    cols = list(cols)
    k1, k2 = len(j1), len(j2)
    if k1 + k2 == 0:
        # no multipliers left: feasible only when no reward row is positive
        if np.all(lp.objective[cols] <= 0.0):
            return LpSolution(value=0.0, q=np.zeros(lp.num_cols),
                              dual_y=np.zeros(lp.num_cost_rows),
                              dual_z=np.zeros(lp.num_flow_rows),
                              status="optimal", dual_value=0.0)
        return LpSolution(value=math.nan, q=None, dual_y=None, dual_z=None,
                          status="infeasible")
    # variables: [y_{J1}, z_{J2}]
    c = np.concatenate([lp.budgets[j1], lp.flow_rhs[j2]])
    a_ub = -np.hstack([
        lp.cost_matrix[np.ix_(j1, cols)].T if k1 else np.zeros((len(cols), 0)),
        lp.flow_matrix[np.ix_(j2, cols)].T if k2 else np.zeros((len(cols), 0)),
    ])
    b_ub = -lp.objective[cols]
    bounds = [(0.0, None)] * k1 + [(None, None)] * k2
    res = linprog(c, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs", options=_HIGHS_OPTIONS)
    status = _STATUS.get(res.status)
    if status is None:
        raise LpSolverError(f"dual LP solve failed: {res.message}")
    if status != "optimal":
        # infeasible: J cannot cover the reward rows; unbounded: J too small to
        # support the constraints. Either way the restricted dual differs from V.
        return LpSolution(value=math.nan, q=None, dual_y=None, dual_z=None, status=status)
    dual_y = np.zeros(lp.num_cost_rows)
    dual_z = np.zeros(lp.num_flow_rows)
    if k1:
        dual_y[j1] = res.x[:k1]
    if k2:
        dual_z[j2] = res.x[k1:]
    q = np.zeros(lp.num_cols)
    q[cols] = -np.asarray(res.ineqlin.marginals)
    return LpSolution(value=float(res.fun), q=q, dual_y=dual_y, dual_z=dual_z,
                      status="optimal", dual_value=float(res.fun))


def _resolve_rows(lp: StandardLp, row_subset):
    if row_subset is None:
        return list(range(lp.num_cost_rows)), list(range(lp.num_flow_rows))
    j1, j2 = row_subset
    return list(j1), list(j2)


def solve_square_system(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve A x = b for square A, refusing near-singular systems.

    Raises SingularSystemError carrying sigma_min when
    sigma_min(A) < 1e-12 * ||A||_2.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    sv = singular_values(A)
    sigma_min, sigma_max = sv[-1], sv[0]
    if sigma_min < 1e-12 * sigma_max or sigma_max == 0.0:
        raise SingularSystemError(
            f"system is numerically singular (sigma_min={sigma_min:.3e})", sigma_min)
    x = np.linalg.solve(A, b)
    resid = np.max(np.abs(A @ x - b))
    bound = 1e-10 * (sigma_max * float(np.linalg.norm(x)) + float(np.linalg.norm(b)))
    if resid > bound:
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        resid = np.max(np.abs(A @ x - b))
        if resid > bound:
            raise SingularSystemError(
                f"residual {resid:.3e} exceeds bound {bound:.3e}", sigma_min)
    return x


def singular_values(A: np.ndarray) -> np.ndarray:
    """All singular values, descending, by one-sided Jacobi orthogonalization.

    Accurate for the small dense matrices used here (up to a few hundred rows);
    rectangular input is handled by working on the taller orientation.
    """
    G = np.array(A, dtype=float)
    if G.ndim != 2 or G.size == 0:
        raise ValueError("matrix must be nonempty and 2-dimensional")
    if G.shape[0] < G.shape[1]:
        G = G.T.copy()
    n = G.shape[1]
    if n == 1:
        return np.array([float(np.linalg.norm(G[:, 0]))])
    tol = 1e-15
    for _ in range(60):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                gii = float(G[:, i] @ G[:, i])
                gjj = float(G[:, j] @ G[:, j])
                gij = float(G[:, i] @ G[:, j])
                denom = math.sqrt(gii * gjj)
                if denom == 0.0 or abs(gij) <= tol * denom:
                    continue
                off = max(off, abs(gij) / denom)
                zeta = (gjj - gii) / (2.0 * gij)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                cth = 1.0 / math.sqrt(1.0 + t * t)
                sth = cth * t
                gi = G[:, i].copy()
                G[:, i] = cth * gi - sth * G[:, j]
                G[:, j] = sth * gi + cth * G[:, j]
        if off <= 1e-14:
            break
    sv = np.sort(np.linalg.norm(G, axis=0))[::-1]
    return sv


def smallest_singular_value(A: np.ndarray) -> float:
    return float(singular_values(A)[-1])


def extract_policy(
    q: np.ndarray,
    num_states: int,
    num_actions: int,
    horizon: int | None = None,
    labels=None,
) -> PolicyTable:
    """Normalize an occupancy vector into a policy; zero-mass states act uniformly.

    q follows the canonical column order of the LP builders unless labels maps
    entries explicitly. The result is invariant to rescaling q.
    """
    q = np.asarray(q, dtype=float)
    if np.min(q, initial=0.0) < -1e-12:
        raise ValueError(f"occupancy entries must be nonnegative, min={q.min():.3e}")
    q = np.maximum(q, 0.0)
    if horizon is None:
        table = np.zeros((num_states, num_actions))
        if labels is None:
            table = q.reshape(num_states, num_actions).copy()
        else:
            for value, (s, a) in zip(q, labels):
                table[s, a] += value
        probs = _normalize_rows(table, num_actions)
        return PolicyTable(probs=probs, horizon=None)
    table = np.zeros((horizon, num_states, num_actions))
    if labels is None:
        table = q.reshape(horizon, num_states, num_actions).copy()
    else:
        for value, (s, a, h) in zip(q, labels):
            table[h, s, a] += value
    probs = np.stack([_normalize_rows(table[h], num_actions) for h in range(horizon)])
    return PolicyTable(probs=probs, horizon=horizon)


def _normalize_rows(table: np.ndarray, num_actions: int) -> np.ndarray:
    mass = table.sum(axis=1, keepdims=True)
    out = np.full_like(table, 1.0 / num_actions)
    positive = mass[:, 0] > 0.0
    out[positive] = table[positive] / mass[positive]
    return out


def export_lp_text(lp: StandardLp) -> str:
    """Plain-text dump for debugging: objective, then C|alpha rows, then B|mu rows."""
    lines = ["objective " + " ".join(f"{v:.17g}" for v in lp.objective)]
    for k in range(lp.num_cost_rows):
        row = " ".join(f"{v:.17g}" for v in lp.cost_matrix[k])
        lines.append(f"cost {row} | {lp.budgets[k]:.17g}")
    for s in range(lp.num_flow_rows):
        row = " ".join(f"{v:.17g}" for v in lp.flow_matrix[s])
        lines.append(f"flow {row} | {lp.flow_rhs[s]:.17g}")
    return "\n".join(lines) + "\n"
