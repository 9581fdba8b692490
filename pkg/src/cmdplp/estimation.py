"""Streaming empirical estimates, Hoeffding radii, and empirical LP assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instances import CmdpInstance, RngHandle, Sample
from .lp import StandardLp

__all__ = [
    "EmpiricalEstimates",
    "ConfidenceParams",
    "rad",
    "gaps",
    "build_empirical_lp",
    "collect_uniform",
]


@dataclass
class ConfidenceParams:
    """Failure probability and per-pair sample count driving the radii."""

    epsilon: float
    n0: int

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.n0 < 1:
            raise ValueError("n0 must be >= 1")


@dataclass
class EmpiricalEstimates:
    """Per-pair sample counts, streaming means, and transition frequencies.

    Single writer; readers may run between updates. Means are updated in
    streaming form, transition frequencies as raw counts normalized on demand.
    """

    num_states: int
    num_actions: int
    num_constraints: int
    counts: np.ndarray = field(init=False)
    mean_reward: np.ndarray = field(init=False)
    mean_costs: np.ndarray = field(init=False)
    trans_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        S, A, K = self.num_states, self.num_actions, self.num_constraints
        self.counts = np.zeros((S, A), dtype=np.int64)
        self.mean_reward = np.zeros((S, A))
        self.mean_costs = np.zeros((K, S, A))
        self.trans_counts = np.zeros((S, A, S))

    def update(self, s: int, a: int, sample: Sample) -> "EmpiricalEstimates":
        """Fold one observation into the running means and transition counts."""
        n = self.counts[s, a] + 1
        self.counts[s, a] = n
        self.mean_reward[s, a] += (sample.reward - self.mean_reward[s, a]) / n
        if self.num_constraints:
            self.mean_costs[:, s, a] += (sample.costs - self.mean_costs[:, s, a]) / n
        self.trans_counts[s, a, sample.next_state] += 1
        return self

    def add_batch(self, rewards: np.ndarray, costs: np.ndarray, next_states: np.ndarray) -> "EmpiricalEstimates":
        """Fold n observations per pair at once; shapes (n, S, A), (n, K, S, A), (n, S, A)."""
        n = rewards.shape[0]
        if n == 0:
            return self
        old = self.counts.astype(float)
        new = old + n
        self.mean_reward += (rewards.sum(axis=0) - n * self.mean_reward) / new
        if self.num_constraints:
            self.mean_costs += (costs.sum(axis=0) - n * self.mean_costs) / new[None]
        S = self.num_states
        onehot = next_states[..., None] == np.arange(S)
        self.trans_counts += onehot.sum(axis=0)
        self.counts += n
        return self

    def merge(self, other: "EmpiricalEstimates") -> "EmpiricalEstimates":
        """Count-weighted combination, for samples collected in parallel."""
        merged = EmpiricalEstimates(self.num_states, self.num_actions, self.num_constraints)
        total = self.counts + other.counts
        safe = np.maximum(total, 1).astype(float)
        merged.counts = total
        merged.mean_reward = (self.counts * self.mean_reward + other.counts * other.mean_reward) / safe
        if self.num_constraints:
            merged.mean_costs = (
                self.counts[None] * self.mean_costs + other.counts[None] * other.mean_costs
            ) / safe[None]
        merged.trans_counts = self.trans_counts + other.trans_counts
        return merged

    def transition_freq(self) -> np.ndarray:
        """Empirical kernel P_bar(s' | s, a); rows with no samples are zero."""
        denom = np.maximum(self.counts, 1).astype(float)
        return self.trans_counts / denom[..., None]

    def min_count(self) -> int:
        return int(self.counts.min())

    def missing_pairs(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.counts == 0)
        return list(zip(rows.tolist(), cols.tolist()))


def rad(n0: int, epsilon: float) -> float:
    """Hoeffding half-width sqrt(log(2/eps) / (2 n0)) for unit-range observations."""
    if n0 < 1:
        raise ValueError("n0 must be >= 1")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return math.sqrt(math.log(2.0 / epsilon) / (2.0 * n0))


def gaps(
    n0: int,
    epsilon: float,
    num_states: int,
    gamma: float,
    min_budget: float,
    num_constraints: int,
    scale: float = 1.0,
    horizon: int | None = None,
    sigma_star: float | None = None,
) -> tuple[float, float]:
    """Lower/upper estimation gaps for the empirical LP value.

    min_budget is the smallest occupancy-scale budget. The radius is rescaled
    by the declared observation width. With no cost rows the upper gap is zero
    by convention. The episodic variant widens the radius by the horizon and
    needs the basis conditioning sigma_star.
    """
    r = rad(n0, epsilon) * scale
    if horizon is None:
        gap1 = r
        if num_constraints == 0:
            return gap1, 0.0
        if min_budget <= 0:
            raise ValueError("min budget must be positive when cost rows exist")
        S = num_states
        gap2 = (2.0 * r / min_budget) * (1.0 + S / (1.0 - gamma)) \
            + (r * r / min_budget) * (S + S * S / (1.0 - gamma))
        return gap1, gap2
    gap1 = r * horizon
    if num_constraints == 0 and sigma_star is None:
        return gap1, 0.0
    if sigma_star is None or sigma_star <= 0:
        raise ValueError("episodic upper gap needs a positive sigma_star")
    S, H, K = num_states, horizon, num_constraints
    gap2 = r * 2.0 * (K + S * H) / sigma_star + r * r * (K * S + S * S * H) / sigma_star
    return gap1, gap2


def build_empirical_lp(
    est: EmpiricalEstimates,
    gamma: float,
    budgets: np.ndarray,
    init_dist: np.ndarray,
    lam: float,
) -> StandardLp:
    """Assemble the empirical occupancy LP with slack lam on its rows.

    Requires one sample per pair; budgets are value-scale and converted to the
    LP scale exactly as in the exact build.
    """
    missing = est.missing_pairs()
    if missing:
        raise ValueError(f"uncovered state-action pairs: {missing}")
    S, A, K = est.num_states, est.num_actions, est.num_constraints
    p_bar = est.transition_freq()
    delta_part = np.kron(np.eye(S), np.ones((1, A)))
    b_bar = delta_part - gamma * p_bar.transpose(2, 0, 1).reshape(S, S * A)
    return StandardLp(
        objective=est.mean_reward.reshape(-1).copy(),
        cost_matrix=est.mean_costs.reshape(K, S * A).copy(),
        flow_matrix=b_bar,
        budgets=(1.0 - gamma) * np.asarray(budgets, dtype=float),
        flow_rhs=(1.0 - gamma) * np.asarray(init_dist, dtype=float),
        col_labels=[(s, a) for s in range(S) for a in range(A)],
        row_labels=[("cost", k) for k in range(K)] + [("flow", s) for s in range(S)],
        slack=lam,
    )


def collect_uniform(
    instance: CmdpInstance,
    n: int,
    rng: RngHandle,
    est: EmpiricalEstimates | None = None,
) -> EmpiricalEstimates:
    """Query the generative model n times for every pair and fold into est."""
    S, A, K = instance.num_states, instance.num_actions, instance.num_constraints
    if est is None:
        est = EmpiricalEstimates(S, A, K)
    if n == 0:
        return est
    g = rng.generator
    nv = instance.noise
    rewards = np.broadcast_to(instance.mean_reward, (n, S, A)).copy()
    costs = np.broadcast_to(instance.mean_costs, (n, K, S, A)).copy()
    if nv > 0:
        rewards += g.uniform(-nv, nv, size=(n, S, A))
        if K:
            costs += g.uniform(-nv, nv, size=(n, K, S, A))
    cum = np.cumsum(instance.kernel, axis=2)
    u = g.random((n, S, A))
    next_states = np.empty((n, S, A), dtype=np.int64)
    for s in range(S):
        for a in range(A):
            next_states[:, s, a] = np.searchsorted(cum[s, a], u[:, s, a], side="right")
    np.clip(next_states, 0, S - 1, out=next_states)
    return est.add_batch(rewards, costs, next_states)
