"""Adaptive resolving against shrinking budgets, with generative, off-policy, and on-policy drivers.

Each round solves the identified basis's square system against the remaining
per-round budget share, projects onto a capped simplex, consumes one fresh
sample per basic pair, and debits the realized consumption from the ledgers.
Ledgers are maintained as initial minus a running consumption sum, so the
bookkeeping identity sum_m C^m q^m = alpha^1 - alpha^n holds exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .basis import (
    BasisIdentificationError,
    identify_basis_doubling,
    identify_basis_empirical,
    identify_basis_true,
)
from .estimation import ConfidenceParams, EmpiricalEstimates, collect_uniform
from .instances import CmdpInstance, RngHandle, Sample
from .lp import BasisPair, PolicyTable, build_infinite_lp, extract_policy

__all__ = [
    "ResolveState",
    "RunOutput",
    "CoverageError",
    "project_capped_simplex",
    "resolve_step",
    "run_adaptive_resolving",
    "run_offpolicy",
    "run_onpolicy",
    "stationary_pair_distribution",
]


class CoverageError(RuntimeError):
    def __init__(self, message: str, uncovered: list):
        super().__init__(message)
        self.uncovered = uncovered


def project_capped_simplex(v, radius: float = 2.0, support=None, lower: float | None = None):
    """Euclidean projection onto {q: ||q||_1 <= radius, q >= lower on support, zero elsewhere}."""
    v = np.asarray(v, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    idx = np.arange(v.shape[0]) if support is None else np.asarray(sorted(support), dtype=int)
    lo = 0.0 if lower is None else float(lower)
    if lo * len(idx) > radius + 1e-15:
        raise ValueError("lower bound infeasible: lower * |support| exceeds radius")
    out = np.zeros_like(v)
    out[idx] = _project_box_cap(v[idx], radius, lo)
    return out


def _project_box_cap(w: np.ndarray, radius: float, lower: float) -> np.ndarray:
    shifted = w - lower
    budget = radius - lower * w.shape[0]
    clipped = np.maximum(shifted, 0.0)
    total = clipped.sum()
    if total <= budget:
        return clipped + lower
    u = np.sort(shifted)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, w.shape[0] + 1)
    positive = u - (css - budget) / ks > 0
    rho = int(np.nonzero(positive)[0][-1])
    theta = (css[rho] - budget) / (rho + 1)
    return np.maximum(shifted - theta, 0.0) + lower


@dataclass
class ResolveState:
    """Ledgers, restricted estimates, and cached instance data for one run."""

    basis: BasisPair
    n2: int
    gamma: float
    noise: float
    radius: float = 2.0
    lower: float = 0.0
    round: int = 1
    # ledgers: remaining = initial - consumed, with consumed a sequential running sum
    initial_budgets: np.ndarray = None
    initial_flow: np.ndarray = None
    consumed_budgets: np.ndarray = None
    consumed_flow: np.ndarray = None
    # restricted running estimates
    counts_sub: np.ndarray = None
    cost_sums: np.ndarray = None
    trans_sums: np.ndarray = None
    reward_sums: np.ndarray = None
    # cached instance slices
    s_idx: np.ndarray = None
    a_idx: np.ndarray = None
    j2_states: np.ndarray = None
    j2_pos: np.ndarray = None
    delta_sub: np.ndarray = None
    cum_kernel: np.ndarray = None
    mean_r_sub: np.ndarray = None
    mean_c_sub: np.ndarray = None
    # per-round records
    q_hist: np.ndarray = None
    cons_cost_hist: np.ndarray = None
    cons_flow_hist: np.ndarray = None
    projection_rounds: list = field(default_factory=list)
    singular_rounds: list = field(default_factory=list)
    prev_q: np.ndarray = None
    _a_buf: np.ndarray = None
    _t_buf: np.ndarray = None

    @staticmethod
    def create(instance: CmdpInstance, basis: BasisPair, n2: int,
               est: EmpiricalEstimates, lower: float = 0.0) -> "ResolveState":
        if basis.size == 0 or basis.size != len(basis.rows_cost) + len(basis.rows_flow):
            raise BasisIdentificationError(
                f"basis is not square: |I|={basis.size}, "
                f"|J|={len(basis.rows_cost) + len(basis.rows_flow)}")
        S, A = instance.num_states, instance.num_actions
        cols = np.asarray(basis.cols, dtype=int)
        s_idx, a_idx = cols // A, cols % A
        j1 = list(basis.rows_cost)
        j2 = np.asarray(basis.rows_flow, dtype=int)
        m, k1, k2 = len(cols), len(j1), len(j2)
        counts = est.counts[s_idx, a_idx].astype(float)
        if counts.min() < 1:
            raise ValueError("every basis pair needs at least one seed sample")
        state = ResolveState(basis=basis, n2=n2, gamma=instance.gamma,
                             noise=instance.noise, lower=lower)
        state.s_idx, state.a_idx, state.j2_states = s_idx, a_idx, j2
        pos = np.full(S, -1, dtype=int)
        pos[j2] = np.arange(k2)
        state.j2_pos = pos
        state.delta_sub = (j2[:, None] == s_idx[None, :]).astype(float)
        state.cum_kernel = np.cumsum(instance.kernel[s_idx, a_idx], axis=1)
        state.mean_r_sub = instance.mean_reward[s_idx, a_idx].copy()
        state.mean_c_sub = instance.mean_costs[j1][:, s_idx, a_idx] if k1 else np.zeros((0, m))
        lp_budgets = (1.0 - instance.gamma) * instance.budgets
        lp_flow = (1.0 - instance.gamma) * instance.init_dist
        state.initial_budgets = n2 * lp_budgets[j1]
        state.initial_flow = n2 * lp_flow[j2]
        state.consumed_budgets = np.zeros(k1)
        state.consumed_flow = np.zeros(k2)
        state.counts_sub = counts
        state.cost_sums = est.mean_costs[j1][:, s_idx, a_idx] * counts[None, :] \
            if k1 else np.zeros((0, m))
        state.trans_sums = est.trans_counts[s_idx, a_idx][:, j2].T.copy()
        state.reward_sums = est.mean_reward[s_idx, a_idx] * counts
        state.q_hist = np.zeros((n2, m))
        state.cons_cost_hist = np.zeros((n2, k1))
        state.cons_flow_hist = np.zeros((n2, k2))
        state.prev_q = np.zeros(m)
        return state

    @property
    def size(self) -> int:
        return self.basis.size

    @property
    def remaining_budgets(self) -> np.ndarray:
        return self.initial_budgets - self.consumed_budgets

    @property
    def remaining_flow(self) -> np.ndarray:
        return self.initial_flow - self.consumed_flow

    def current_cost_estimate(self) -> np.ndarray:
        return self.cost_sums / self.counts_sub[None, :]

    def current_flow_estimate(self) -> np.ndarray:
        return self.delta_sub - self.gamma * self.trans_sums / self.counts_sub[None, :]

    def compute_round_solution(self) -> tuple[np.ndarray, bool, bool]:
        """Solve the empirical square system against the per-round budget share, then project."""
        n = self.round
        share = float(self.n2 - n + 1)
        m, k1 = self.size, self.initial_budgets.shape[0]
        if self._a_buf is None:
            self._a_buf = np.empty((m, m))
            self._t_buf = np.empty(m)
        a_mat, target = self._a_buf, self._t_buf
        np.subtract(self.initial_budgets, self.consumed_budgets, out=target[:k1])
        np.subtract(self.initial_flow, self.consumed_flow, out=target[k1:])
        target /= share
        if k1:
            np.divide(self.cost_sums, self.counts_sub[None, :], out=a_mat[:k1])
        np.divide(self.trans_sums, self.counts_sub[None, :], out=a_mat[k1:])
        a_mat[k1:] *= -self.gamma
        a_mat[k1:] += self.delta_sub
        singular = False
        try:
            x = np.linalg.solve(a_mat, target)
            resid = np.abs(a_mat @ x - target).max()
            if not resid <= 1e-8 * (1.0 + np.abs(target).max() + np.abs(x).max()):
                singular = True
        except np.linalg.LinAlgError:
            singular = True
        if singular:
            x = self.prev_q.copy()
            self.singular_rounds.append(n)
        projected = not (x.min() >= self.lower and x.sum() <= self.radius)
        if projected:
            x = _project_box_cap(x, self.radius, self.lower)
            self.projection_rounds.append(n)
        return x, projected, singular

    def apply_round(self, q: np.ndarray, rewards: np.ndarray,
                    cost_samples: np.ndarray, next_states: np.ndarray) -> None:
        """Debit realized consumption and fold the round's samples into the estimates."""
        n = self.round
        k2 = self.j2_states.shape[0]
        cons_cost = cost_samples @ q if cost_samples.shape[0] else np.zeros(0)
        pos = self.j2_pos[next_states]
        valid = pos >= 0
        scatter = np.bincount(pos[valid], weights=q[valid], minlength=k2)
        cons_flow = self.delta_sub @ q - self.gamma * scatter
        self.consumed_budgets += cons_cost
        self.consumed_flow += cons_flow
        self.cost_sums += cost_samples
        self.reward_sums += rewards
        ones = np.nonzero(valid)[0]
        self.trans_sums[pos[ones], ones] += 1.0
        self.counts_sub += 1.0
        self.q_hist[n - 1] = q
        self.cons_cost_hist[n - 1] = cons_cost
        self.cons_flow_hist[n - 1] = cons_flow
        self.prev_q = q
        self.round += 1


def resolve_step(state: ResolveState, instance: CmdpInstance, rng: RngHandle):
    """One adaptive-resolving round with generative sampling; returns (q_n, state).

    q_n is restricted to the basis columns (zero elsewhere by construction).
    """
    if state.round > state.n2:
        raise ValueError("all rounds already executed")
    q, _, _ = state.compute_round_solution()
    g = rng.generator
    m = state.size
    nv = state.noise
    rewards = state.mean_r_sub.copy()
    costs = state.mean_c_sub.copy()
    if nv > 0:
        rewards += g.uniform(-nv, nv, size=m)
        if costs.shape[0]:
            costs += g.uniform(-nv, nv, size=costs.shape)
    u = g.random(m)
    next_states = np.minimum((state.cum_kernel <= u[:, None]).sum(axis=1),
                             state.cum_kernel.shape[1] - 1)
    state.apply_round(q, rewards, costs, next_states)
    return q, state


@dataclass
class RunOutput:
    """Per-round occupancies on the basis support, the averaged measure, and the policy."""

    basis: BasisPair
    num_states: int
    num_actions: int
    q_rounds: np.ndarray
    q_bar: np.ndarray
    policy: PolicyTable
    samples_used: int
    alpha_final: np.ndarray
    mu_final: np.ndarray
    cons_cost_rounds: np.ndarray
    cons_flow_rounds: np.ndarray
    diagnostics: dict

    def occupancy_round(self, n: int) -> np.ndarray:
        """Full occupancy vector of round n (1-based)."""
        q = np.zeros(self.num_states * self.num_actions)
        q[list(self.basis.cols)] = self.q_rounds[n - 1]
        return q

    def rewards_per_round(self, objective: np.ndarray) -> np.ndarray:
        return self.q_rounds @ objective[list(self.basis.cols)]

    def write_trace_csv(self, path, q_star: np.ndarray | None = None) -> None:
        cols = list(self.basis.cols)
        n2 = self.q_rounds.shape[0]
        alpha = np.cumsum(self.cons_cost_rounds, axis=0)
        mu = np.cumsum(self.cons_flow_rounds, axis=0)
        alpha = (self.alpha_final + self.cons_cost_rounds.sum(axis=0))[None, :] - alpha
        mu = (self.mu_final + self.cons_flow_rounds.sum(axis=0))[None, :] - mu
        proj = set(self.diagnostics.get("projection_rounds", []))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["n"]
            if q_star is not None:
                header.append("q_err_l1")
            header += [f"alpha_{k}" for k in self.basis.rows_cost]
            header += [f"mu_{s}" for s in self.basis.rows_flow]
            header += ["projection_active", "samples"]
            writer.writerow(header)
            for n in range(1, n2 + 1):
                row = [n]
                if q_star is not None:
                    diff = np.abs(q_star[cols] - self.q_rounds[n - 1]).sum()
                    diff += np.abs(np.delete(q_star, cols)).sum()
                    row.append(f"{diff:.10g}")
                row += [f"{v:.10g}" for v in alpha[n - 1]]
                row += [f"{v:.10g}" for v in mu[n - 1]]
                row += [int(n in proj), len(cols)]
                writer.writerow(row)


def _epsilon_wiring(epsilon_target: float, instance: CmdpInstance) -> float:
    k = max(instance.num_constraints, 1)
    eps = epsilon_target ** 2 / (k * instance.num_states * instance.num_actions)
    return min(max(eps, 1e-12), 0.5)


def _resolve_basis(instance, est, n0, epsilon_target, rng, basis, basis_mode, sample_budget):
    """Shared basis wiring for the run drivers; returns (basis, extra_samples)."""
    if basis is not None:
        return basis, 0
    eps = _epsilon_wiring(epsilon_target, instance)
    if basis_mode == "true":
        return identify_basis_true(build_infinite_lp(instance)), 0
    if basis_mode == "empirical":
        pair = identify_basis_empirical(
            est, ConfidenceParams(epsilon=eps, n0=n0), gamma=instance.gamma,
            budgets=instance.budgets, init_dist=instance.init_dist, scale=instance.scale)
        return pair, 0
    if basis_mode == "doubling":
        before = int(est.counts.sum())
        result = identify_basis_doubling(instance, rng, epsilon=eps, n0_start=max(n0, 1),
                                         sample_budget=sample_budget, est=est)
        return result.basis, result.samples_used - before
    raise ValueError(f"unknown basis_mode {basis_mode!r}")


def run_adaptive_resolving(
    instance: CmdpInstance,
    n1: int,
    n2: int,
    epsilon_target: float,
    rng: RngHandle,
    basis_mode: str = "empirical",
    basis: BasisPair | None = None,
    sample_budget: int = 2**22,
) -> RunOutput:
    """Two-phase run with generative sampling: identify a basis, then resolve n2 rounds."""
    S, A = instance.num_states, instance.num_actions
    est = collect_uniform(instance, n1, rng)
    samples = n1 * S * A
    basis, extra = _resolve_basis(instance, est, n1, epsilon_target, rng,
                                  basis, basis_mode, sample_budget)
    samples += extra
    state = ResolveState.create(instance, basis, n2, est)
    for _ in range(n2):
        resolve_step(state, instance, rng)
    samples += n2 * basis.size
    return _finish(state, S, A, samples, {})


def _finish(state: ResolveState, S: int, A: int, samples: int, extra_diag: dict) -> RunOutput:
    q_bar_sub = state.q_hist.mean(axis=0)
    q_bar = np.zeros(S * A)
    q_bar[list(state.basis.cols)] = q_bar_sub
    policy = extract_policy(q_bar, S, A)
    diagnostics = {
        "projection_rounds": list(state.projection_rounds),
        "singular_rounds": list(state.singular_rounds),
    }
    diagnostics.update(extra_diag)
    return RunOutput(
        basis=state.basis, num_states=S, num_actions=A,
        q_rounds=state.q_hist, q_bar=q_bar, policy=policy,
        samples_used=samples,
        alpha_final=state.remaining_budgets, mu_final=state.remaining_flow,
        cons_cost_rounds=state.cons_cost_hist, cons_flow_rounds=state.cons_flow_hist,
        diagnostics=diagnostics,
    )


def stationary_pair_distribution(instance: CmdpInstance, policy: PolicyTable) -> np.ndarray:
    """Stationary distribution over state-action pairs of the policy-induced chain."""
    probs = policy.probs
    p_state = np.einsum("sa,sat->st", probs, instance.kernel)
    w, vecs = np.linalg.eig(p_state.T)
    idx = int(np.argmin(np.abs(w - 1.0)))
    d = np.real(vecs[:, idx])
    d = np.abs(d)
    d /= d.sum()
    return d[:, None] * probs


def _env_step(instance: CmdpInstance, s: int, a: int, g: np.random.Generator):
    nv = instance.noise
    reward = float(instance.mean_reward[s, a])
    costs = instance.mean_costs[:, s, a].copy()
    if nv > 0:
        reward += g.uniform(-nv, nv)
        if costs.shape[0]:
            costs += g.uniform(-nv, nv, size=costs.shape[0])
    u = g.random()
    s_next = int(min(np.searchsorted(np.cumsum(instance.kernel[s, a]), u, side="right"),
                     instance.num_states - 1))
    return reward, costs, s_next


def run_offpolicy(
    instance: CmdpInstance,
    behavior: PolicyTable,
    n1: int,
    n2: int,
    epsilon_target: float,
    rng: RngHandle,
    basis_mode: str = "empirical",
    basis: BasisPair | None = None,
    step_budget: int = 10**7,
) -> RunOutput:
    """Adaptive resolving fed by a behavior-policy walk of the true environment.

    Phase 1 walks the chain until every pair holds n1 samples; each resolving
    round walks until every basis pair is observed once, using the first
    observation per pair. samples_used counts environment steps.
    """
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    g = rng.generator
    cum_beh = np.cumsum(behavior.probs, axis=1)
    est = EmpiricalEstimates(S, A, K)
    s = int(np.searchsorted(np.cumsum(instance.init_dist), g.random(), side="right"))
    s = min(s, S - 1)
    steps = 0
    while est.min_count() < n1:
        if steps >= step_budget:
            raise CoverageError(
                f"phase-1 step budget {step_budget} exhausted", _uncovered(est, n1))
        a = int(min(np.searchsorted(cum_beh[s], g.random(), side="right"), A - 1))
        reward, costs, s_next = _env_step(instance, s, a, g)
        est.update(s, a, Sample(reward=reward, costs=costs, next_state=s_next))
        s = s_next
        steps += 1
    if basis is None and basis_mode not in ("empirical", "true"):
        raise ValueError("off-policy runs support basis_mode 'empirical' or 'true'")
    basis, _ = _resolve_basis(instance, est, est.min_count(), epsilon_target, rng,
                              basis, basis_mode, 0)
    state = ResolveState.create(instance, basis, n2, est)
    i_pos = np.full((S, A), -1, dtype=int)
    for pos, c in enumerate(basis.cols):
        i_pos[c // A, c % A] = pos
    m = basis.size
    j1 = list(basis.rows_cost)
    round_steps = []
    for _ in range(n2):
        q, _, _ = state.compute_round_solution()
        seen = np.zeros(m, dtype=bool)
        rewards = np.zeros(m)
        cost_samples = np.zeros((len(j1), m))
        next_states = np.zeros(m, dtype=int)
        this_round = 0
        while not seen.all():
            if steps >= step_budget:
                uncovered = [(int(state.s_idx[i]), int(state.a_idx[i]))
                             for i in range(m) if not seen[i]]
                raise CoverageError("resolving step budget exhausted", uncovered)
            a = int(min(np.searchsorted(cum_beh[s], g.random(), side="right"), A - 1))
            reward, costs, s_next = _env_step(instance, s, a, g)
            pos = i_pos[s, a]
            if pos >= 0 and not seen[pos]:
                seen[pos] = True
                rewards[pos] = reward
                if j1:
                    cost_samples[:, pos] = costs[j1]
                next_states[pos] = s_next
            s = s_next
            steps += 1
            this_round += 1
        state.apply_round(q, rewards, cost_samples, next_states)
        round_steps.append(this_round)
    mu_pairs = stationary_pair_distribution(instance, behavior)
    diag = {"env_steps": steps, "round_steps": round_steps,
            "mu_min": float(mu_pairs.min())}
    return _finish(state, S, A, steps, diag)


def run_onpolicy(
    instance: CmdpInstance,
    n1: int,
    n2: int,
    n3: int,
    epsilon_target: float,
    rng: RngHandle,
    xi_prime: float | None = None,
    basis_mode: str = "empirical",
    basis: BasisPair | None = None,
    coverage_budget: int = 10**7,
) -> RunOutput:
    """Algorithm variant that samples by following its own round policies.

    Phase 1 walks under the uniform policy for n1 steps (continuing until every
    pair is covered once). Each round builds the policy induced by q_n, walks
    until every basis pair is visited, doubling the per-round step limit n3
    whenever it is hit. The projection floors q_n at xi_prime on the support.
    """
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    g = rng.generator
    est = EmpiricalEstimates(S, A, K)
    s = int(min(np.searchsorted(np.cumsum(instance.init_dist), g.random(), side="right"), S - 1))
    steps = 0
    while steps < n1 or est.min_count() < 1:
        if steps >= coverage_budget:
            raise CoverageError("phase-1 coverage budget exhausted", _uncovered(est, 1))
        a = int(g.integers(A))
        reward, costs, s_next = _env_step(instance, s, a, g)
        est.update(s, a, Sample(reward=reward, costs=costs, next_state=s_next))
        s = s_next
        steps += 1
    if basis is None and basis_mode not in ("empirical", "true"):
        raise ValueError("on-policy runs support basis_mode 'empirical' or 'true'")
    basis, _ = _resolve_basis(instance, est, est.min_count(), epsilon_target, rng,
                              basis, basis_mode, 0)
    if xi_prime is None:
        xi_prime = _auto_xi(instance, basis, est)
    state = ResolveState.create(instance, basis, n2, est, lower=xi_prime)
    m = basis.size
    if xi_prime * m > state.radius:
        raise ValueError("xi_prime too large: lower bound infeasible for the projection")
    i_pos = np.full((S, A), -1, dtype=int)
    for pos, c in enumerate(basis.cols):
        i_pos[c // A, c % A] = pos
    # start from a state carrying basis mass
    s = int(state.s_idx[0])
    j1 = list(basis.rows_cost)
    doublings = 0
    visited_states: set[int] = set()
    for _ in range(n2):
        q, _, _ = state.compute_round_solution()
        q_full = np.zeros(S * A)
        q_full[list(basis.cols)] = q
        pi = extract_policy(q_full, S, A)
        cum_pi = np.cumsum(pi.probs, axis=1)
        seen = np.zeros(m, dtype=bool)
        rewards = np.zeros(m)
        cost_samples = np.zeros((len(j1), m))
        next_states = np.zeros(m, dtype=int)
        limit = n3
        this_round = 0
        while not seen.all():
            if this_round >= limit:
                limit *= 2
                n3 = limit
                doublings += 1
            if steps >= coverage_budget:
                uncovered = [(int(state.s_idx[i]), int(state.a_idx[i]))
                             for i in range(m) if not seen[i]]
                raise CoverageError("on-policy coverage budget exhausted", uncovered)
            a = int(min(np.searchsorted(cum_pi[s], g.random(), side="right"), A - 1))
            reward, costs, s_next = _env_step(instance, s, a, g)
            pos = i_pos[s, a]
            if pos >= 0 and not seen[pos]:
                seen[pos] = True
                rewards[pos] = reward
                if j1:
                    cost_samples[:, pos] = costs[j1]
                next_states[pos] = s_next
            visited_states.add(s)
            s = s_next
            steps += 1
            this_round += 1
        state.apply_round(q, rewards, cost_samples, next_states)
    diag = {"env_steps": steps, "n3_final": n3, "n3_doublings": doublings,
            "visited_states": sorted(visited_states), "xi_prime": xi_prime}
    return _finish(state, S, A, steps, diag)


def _auto_xi(instance: CmdpInstance, basis: BasisPair, est: EmpiricalEstimates) -> float:
    """xi' = max(1e-4, xi_hat / 4) from the phase-1 empirical basic solution."""
    lp_budgets = (1.0 - instance.gamma) * instance.budgets
    lp_flow = (1.0 - instance.gamma) * instance.init_dist
    j1 = list(basis.rows_cost)
    s_idx = np.asarray(basis.cols, dtype=int) // instance.num_actions
    a_idx = np.asarray(basis.cols, dtype=int) % instance.num_actions
    j2 = np.asarray(basis.rows_flow, dtype=int)
    counts = np.maximum(est.counts[s_idx, a_idx].astype(float), 1.0)
    c_bar = est.mean_costs[j1][:, s_idx, a_idx] if j1 else np.zeros((0, basis.size))
    delta = (j2[:, None] == s_idx[None, :]).astype(float)
    p_bar = est.trans_counts[s_idx, a_idx][:, j2].T / counts[None, :]
    a_mat = np.vstack([c_bar, delta - instance.gamma * p_bar])
    rhs = np.concatenate([lp_budgets[j1], lp_flow[j2]])
    try:
        q_hat = np.linalg.solve(a_mat, rhs)
        xi_hat = float(q_hat.min())
    except np.linalg.LinAlgError:
        xi_hat = 0.0
    xi = max(1e-4, xi_hat / 4.0)
    return min(xi, 1.9 / basis.size)


def _uncovered(est: EmpiricalEstimates, need: int) -> list:
    rows, cols = np.nonzero(est.counts < need)
    return list(zip(rows.tolist(), cols.tolist()))
