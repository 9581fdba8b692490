"""Tabular CMDP instances, seeded generative sampling, and random instance recipes.

Budgets are stored in value scale (discounted-cost scale, range [0, c_max/(1-gamma)]).
The LP layer converts to occupancy scale by multiplying with (1-gamma); see lp.py.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "CmdpInstance",
    "EpisodicInstance",
    "Sample",
    "RngHandle",
    "sample_generative",
    "random_instance",
    "random_episodic_instance",
    "slater_witness",
    "save_instance",
    "load_instance",
]

_STOCHASTIC_TOL = 1e-12


@dataclass
class RngHandle:
    """Deterministic random stream. Same seed, same sample sequence."""

    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = np.random.default_rng(np.random.SeedSequence(self.seed))

    def spawn(self, n: int) -> list["RngHandle"]:
        """Derive n independent child handles (for parallel replicates)."""
        children = np.random.SeedSequence(self.seed).spawn(n + 1)[1:]
        out = []
        for child in children:
            h = RngHandle.__new__(RngHandle)
            h.seed = int(child.generate_state(1)[0])
            h.generator = np.random.default_rng(child)
            out.append(h)
        return out


@dataclass(frozen=True)
class Sample:
    """One generative-model observation at a state-action pair."""

    reward: float
    costs: np.ndarray
    next_state: int


@dataclass(frozen=True)
class CmdpInstance:
    """Tabular discounted CMDP with a uniform-additive observation noise model.

    kernel[s, a, s'] = P(s' | s, a); mean_costs[k, s, a] is the k-th mean cost.
    budgets are value-scale cost caps; scale is the declared observation range
    width used to rescale Hoeffding radii (means width plus 2 * noise).
    """

    num_states: int
    num_actions: int
    gamma: float
    kernel: np.ndarray
    mean_reward: np.ndarray
    mean_costs: np.ndarray
    budgets: np.ndarray
    init_dist: np.ndarray
    noise: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        S, A, K = self.num_states, self.num_actions, self.num_constraints
        if S < 1 or A < 1:
            raise ValueError("num_states and num_actions must be positive")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.kernel.shape != (S, A, S):
            raise ValueError(f"kernel shape {self.kernel.shape} != {(S, A, S)}")
        if self.mean_reward.shape != (S, A):
            raise ValueError("mean_reward shape mismatch")
        if self.mean_costs.shape != (K, S, A):
            raise ValueError("mean_costs shape mismatch")
        row_sums = self.kernel.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > _STOCHASTIC_TOL:
            raise ValueError("kernel rows must sum to 1 within 1e-12")
        if np.any(self.kernel < 0):
            raise ValueError("kernel entries must be nonnegative")
        if abs(self.init_dist.sum() - 1.0) > _STOCHASTIC_TOL or np.any(self.init_dist < 0):
            raise ValueError("init_dist must be a probability vector")
        cost_cap = (self.scale if K else 1.0) / (1.0 - self.gamma)
        if np.any(self.budgets < 0) or np.any(self.budgets > cost_cap + 1e-9):
            raise ValueError(f"budgets must lie in [0, {cost_cap:.6g}] at the declared scale")
        if self.noise < 0:
            raise ValueError("noise half-width must be nonnegative")

    @property
    def num_constraints(self) -> int:
        return self.budgets.shape[0]

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "gamma": self.gamma,
            "kernel": self.kernel.tolist(),
            "mean_reward": self.mean_reward.tolist(),
            "mean_costs": self.mean_costs.tolist(),
            "budgets": self.budgets.tolist(),
            "init_dist": self.init_dist.tolist(),
            "noise": self.noise,
            "scale": self.scale,
        }

    @staticmethod
    def from_dict(d: dict) -> "CmdpInstance":
        return CmdpInstance(
            num_states=int(d["num_states"]),
            num_actions=int(d["num_actions"]),
            gamma=float(d["gamma"]),
            kernel=np.asarray(d["kernel"], dtype=float),
            mean_reward=np.asarray(d["mean_reward"], dtype=float),
            mean_costs=np.asarray(d["mean_costs"], dtype=float),
            budgets=np.asarray(d["budgets"], dtype=float),
            init_dist=np.asarray(d["init_dist"], dtype=float),
            noise=float(d["noise"]),
            scale=float(d["scale"]),
        )


@dataclass(frozen=True)
class EpisodicInstance:
    """Finite-horizon CMDP: per-period kernels/rewards/costs, horizon H, budgets beta_k."""

    horizon: int
    num_states: int
    num_actions: int
    kernels: np.ndarray
    mean_rewards: np.ndarray
    mean_costs: np.ndarray
    budgets: np.ndarray
    init_dist: np.ndarray
    noise: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        H, S, A, K = self.horizon, self.num_states, self.num_actions, self.num_constraints
        if H < 1:
            raise ValueError("horizon must be positive")
        if self.kernels.shape != (H, S, A, S):
            raise ValueError("kernels shape mismatch")
        if self.mean_rewards.shape != (H, S, A):
            raise ValueError("mean_rewards shape mismatch")
        if self.mean_costs.shape != (K, H, S, A):
            raise ValueError("mean_costs shape mismatch")
        if np.max(np.abs(self.kernels.sum(axis=3) - 1.0)) > _STOCHASTIC_TOL:
            raise ValueError("each per-period kernel row must sum to 1 within 1e-12")
        if abs(self.init_dist.sum() - 1.0) > _STOCHASTIC_TOL or np.any(self.init_dist < 0):
            raise ValueError("init_dist must be a probability vector")

    @property
    def num_constraints(self) -> int:
        return self.budgets.shape[0]


def sample_generative(instance: CmdpInstance, s: int, a: int, rng: RngHandle) -> Sample:
    """Query the generative model once at (s, a).

    Returns the realized reward, realized costs for every channel, and a next
    state drawn from the kernel row. Advances rng deterministically.
    """
    if not (0 <= s < instance.num_states and 0 <= a < instance.num_actions):
        raise IndexError(f"invalid state-action pair ({s}, {a})")
    g = rng.generator
    nv = instance.noise
    reward = float(instance.mean_reward[s, a])
    K = instance.num_constraints
    costs = instance.mean_costs[:, s, a].copy()
    if nv > 0:
        reward += g.uniform(-nv, nv)
        if K:
            costs += g.uniform(-nv, nv, size=K)
    next_state = int(g.choice(instance.num_states, p=instance.kernel[s, a]))
    return Sample(reward=reward, costs=costs, next_state=next_state)


def random_instance(
    num_states: int,
    num_actions: int,
    gamma: float,
    num_constraints: int,
    seed: int,
    noise: float = 0.5,
    reward_range: tuple[float, float] = (1.0, 2.0),
    budget_slack: float = 0.9,
) -> CmdpInstance:
    """Generate a random instance following the numerical-study recipe.

    Kernel rows normalize i.i.d. uniform(0, 1) draws. Mean rewards and costs
    are uniform on reward_range with the first action zeroed out (the null
    action carries zero reward and zero cost, which realizes Slater's
    condition constructively). Budgets are budget_slack * mean(cost) / (1-gamma)
    so constraints bind on some instances while the null action keeps a
    strictly feasible point.
    """
    if num_states < 1 or num_actions < 1:
        raise ValueError("dims must be >= 1")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    g = np.random.default_rng(np.random.SeedSequence(seed))
    S, A, K = num_states, num_actions, num_constraints
    raw = g.uniform(size=(S, A, S))
    kernel = raw / raw.sum(axis=2, keepdims=True)
    lo, hi = reward_range
    mean_reward = g.uniform(lo, hi, size=(S, A))
    mean_reward[:, 0] = 0.0
    mean_costs = g.uniform(lo, hi, size=(K, S, A))
    if K:
        mean_costs[:, :, 0] = 0.0
        budgets = budget_slack * mean_costs.reshape(K, -1).mean(axis=1) / (1.0 - gamma)
    else:
        budgets = np.zeros(0)
    init_dist = np.full(S, 1.0 / S)
    return CmdpInstance(
        num_states=S,
        num_actions=A,
        gamma=gamma,
        kernel=kernel,
        mean_reward=mean_reward,
        mean_costs=mean_costs,
        budgets=budgets,
        init_dist=init_dist,
        noise=noise,
        scale=(hi - lo) + 2.0 * noise,
    )


def random_episodic_instance(
    horizon: int,
    num_states: int,
    num_actions: int,
    num_constraints: int,
    seed: int,
    noise: float = 0.0,
    budget_slack: float = 0.9,
) -> EpisodicInstance:
    """Random finite-horizon instance with unit-scale rewards and costs."""
    g = np.random.default_rng(np.random.SeedSequence(seed))
    H, S, A, K = horizon, num_states, num_actions, num_constraints
    raw = g.uniform(size=(H, S, A, S))
    kernels = raw / raw.sum(axis=3, keepdims=True)
    mean_rewards = g.uniform(size=(H, S, A))
    mean_costs = g.uniform(size=(K, H, S, A))
    budgets = budget_slack * H * mean_costs.reshape(K, -1).mean(axis=1) if K else np.zeros(0)
    init = g.uniform(size=S)
    return EpisodicInstance(
        horizon=H,
        num_states=S,
        num_actions=A,
        kernels=kernels,
        mean_rewards=mean_rewards,
        mean_costs=mean_costs,
        budgets=budgets,
        init_dist=init / init.sum(),
        noise=noise,
        scale=1.0 + 2.0 * noise,
    )


def null_action_occupancy(instance: CmdpInstance, action: int = 0) -> np.ndarray:
    """Occupancy measure (scaled by 1-gamma) of the policy that always takes one action."""
    S = instance.num_states
    P_pi = instance.kernel[:, action, :]
    d = np.linalg.solve(np.eye(S) - instance.gamma * P_pi.T, (1.0 - instance.gamma) * instance.init_dist)
    q = np.zeros((S, instance.num_actions))
    q[:, action] = d
    return q.reshape(-1)


def slater_witness(instance: CmdpInstance) -> np.ndarray | None:
    """Occupancy measure of the always-null-action policy if it is strictly feasible.

    Returns None when the null-action policy does not satisfy every cost
    constraint strictly. With no constraints the witness is trivially valid.
    """
    q = null_action_occupancy(instance)
    K = instance.num_constraints
    if K == 0:
        return q
    cost_matrix = instance.mean_costs.reshape(K, -1)
    lp_budgets = (1.0 - instance.gamma) * instance.budgets
    if np.all(cost_matrix @ q < lp_budgets):
        return q
    return None


def save_instance(instance: CmdpInstance, path: str | Path) -> None:
    """Write the JSON instance document (floats round-trip losslessly)."""
    Path(path).write_text(json.dumps(instance.to_dict()) + "\n")


def load_instance(path: str | Path) -> CmdpInstance:
    return CmdpInstance.from_dict(json.loads(Path(path).read_text()))
