"""Exact and Monte Carlo policy evaluation, regret metrics, and oracle solvers."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .instances import CmdpInstance, EpisodicInstance, RngHandle
from .lp import PolicyTable

__all__ = [
    "ValueReport",
    "evaluate_exact",
    "evaluate_monte_carlo",
    "regret_report",
    "err_metric",
    "value_iteration",
    "episodic_dp",
]


@dataclass
class ValueReport:
    """Discounted reward and cost values of a policy from the initial distribution."""

    v_reward: float
    v_costs: np.ndarray
    per_state_reward: np.ndarray | None = None
    per_state_costs: np.ndarray | None = None

    def to_json(self) -> str:
        doc = {"v_reward": self.v_reward, "v_costs": self.v_costs.tolist()}
        if self.per_state_reward is not None:
            doc["per_state_reward"] = self.per_state_reward.tolist()
        if self.per_state_costs is not None:
            doc["per_state_costs"] = self.per_state_costs.tolist()
        return json.dumps(doc)


def policy_transition_matrix(instance: CmdpInstance, policy: PolicyTable) -> np.ndarray:
    """I - gamma * P_pi, the Bellman system matrix of the policy chain."""
    p_pi = np.einsum("sa,sat->st", policy.probs, instance.kernel)
    return np.eye(instance.num_states) - instance.gamma * p_pi


def evaluate_exact(instance: CmdpInstance, policy: PolicyTable) -> ValueReport:
    """Solve the Bellman linear systems for the reward and every cost channel."""
    probs = policy.probs
    if probs.shape != (instance.num_states, instance.num_actions):
        raise ValueError("policy shape mismatch")
    b_pi = policy_transition_matrix(instance, policy)
    r_pi = np.einsum("sa,sa->s", probs, instance.mean_reward)
    K = instance.num_constraints
    rhs = np.column_stack([r_pi] + [np.einsum("sa,sa->s", probs, instance.mean_costs[k])
                                    for k in range(K)])
    values = np.linalg.solve(b_pi, rhs)
    v0 = instance.init_dist @ values
    return ValueReport(
        v_reward=float(v0[0]),
        v_costs=v0[1:].copy(),
        per_state_reward=values[:, 0].copy(),
        per_state_costs=values[:, 1:].T.copy(),
    )


def evaluate_monte_carlo(
    instance: CmdpInstance,
    policy: PolicyTable,
    n_rollouts: int,
    rng: RngHandle,
    horizon: int | None = None,
    tail_bound: float = 1e-4,
) -> tuple[ValueReport, ValueReport]:
    """Truncated-rollout estimate; returns (means, standard errors).

    The horizon defaults to the smallest T with gamma^T / (1 - gamma) below
    tail_bound; the truncated tail is folded into the reported errors.
    """
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    gamma, nv = instance.gamma, instance.noise
    g = rng.generator
    if horizon is None:
        horizon = max(1, math.ceil(math.log(tail_bound * (1.0 - gamma)) / math.log(gamma)))
    cum_pi = np.cumsum(policy.probs, axis=1)
    cum_ker = np.cumsum(instance.kernel, axis=2)
    states = np.searchsorted(np.cumsum(instance.init_dist), g.random(n_rollouts), side="right")
    states = np.minimum(states, S - 1)
    total_r = np.zeros(n_rollouts)
    total_c = np.zeros((K, n_rollouts))
    disc = 1.0
    for _ in range(horizon):
        actions = np.minimum(
            (cum_pi[states] <= g.random(n_rollouts)[:, None]).sum(axis=1), A - 1)
        r = instance.mean_reward[states, actions]
        if nv > 0:
            r = r + g.uniform(-nv, nv, size=n_rollouts)
        total_r += disc * r
        if K:
            c = instance.mean_costs[:, states, actions]
            if nv > 0:
                c = c + g.uniform(-nv, nv, size=(K, n_rollouts))
            total_c += disc * c
        nxt = (cum_ker[states, actions] <= g.random(n_rollouts)[:, None]).sum(axis=1)
        states = np.minimum(nxt, S - 1)
        disc *= gamma
    max_level = instance.scale
    tail = (gamma ** horizon) * max_level / (1.0 - gamma)
    se_r = total_r.std(ddof=1) / math.sqrt(n_rollouts) + tail
    means = ValueReport(v_reward=float(total_r.mean()), v_costs=total_c.mean(axis=1))
    errors = ValueReport(
        v_reward=float(se_r),
        v_costs=total_c.std(axis=1, ddof=1) / math.sqrt(n_rollouts) + tail,
    )
    return means, errors


def regret_report(instance: CmdpInstance, policy: PolicyTable,
                  opt_report: ValueReport) -> dict:
    """Reward regret against the optimal value and per-channel budget violations."""
    report = evaluate_exact(instance, policy)
    return {
        "regret_r": opt_report.v_reward - report.v_reward,
        "regret_k": report.v_costs - instance.budgets,
    }


def err_metric(q_bars, q_star: np.ndarray) -> float:
    """Mean relative l1 deviation of learned averaged occupancies from the optimum."""
    q_star = np.asarray(q_star, dtype=float)
    norm = np.abs(q_star).sum()
    if norm <= 0:
        raise ValueError("q_star must have positive l1 norm")
    devs = [np.abs(np.asarray(q) - q_star).sum() / norm for q in q_bars]
    return float(np.mean(devs))


def value_iteration(instance: CmdpInstance, tol: float = 1e-12,
                    max_iters: int = 100000) -> tuple[np.ndarray, float]:
    """Unconstrained optimal values by value iteration; returns (V, mu_1' V)."""
    gamma = instance.gamma
    v = np.zeros(instance.num_states)
    pv = np.einsum("sat,t->sa", instance.kernel, v)
    for _ in range(max_iters):
        q = instance.mean_reward + gamma * pv
        v_new = q.max(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        pv = np.einsum("sat,t->sa", instance.kernel, v)
        if delta * gamma / (1.0 - gamma) < tol:
            break
    return v, float(instance.init_dist @ v)


def episodic_dp(instance: EpisodicInstance) -> float:
    """Unconstrained optimal total reward by backward induction."""
    H, S = instance.horizon, instance.num_states
    v = np.zeros(S)
    for h in range(H - 1, -1, -1):
        q = instance.mean_rewards[h] + np.einsum("sat,t->sa", instance.kernels[h], v)
        v = q.max(axis=1)
    return float(instance.init_dist @ v)
