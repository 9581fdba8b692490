import numpy as np
import pytest

from cmdplp import CmdpInstance, random_instance


def unit_instance(seed: int, S: int = 4, A: int = 3, K: int = 2,
                  gamma: float = 0.6, noise: float = 0.2) -> CmdpInstance:
    """Random instance with unit-range means (the theory's native scale)."""
    return random_instance(S, A, gamma, K, seed=seed, noise=noise,
                           reward_range=(0.0, 1.0))


def make_separated_instance(seed: int, S: int = 4, A: int = 4, K: int = 2,
                            gamma: float = 0.02) -> CmdpInstance:
    """Instance family with well-separated hardness constants.

    One clearly-best action per state (reward 1 vs 0), near-free costs with
    slack budgets, and a tiny discount, so the value drop from deleting any
    supported column dwarfs the estimation thresholds at moderate sample sizes.
    """
    g = np.random.default_rng(np.random.SeedSequence(seed))
    raw = g.uniform(size=(S, A, S))
    kernel = raw / raw.sum(axis=2, keepdims=True)
    mean_reward = np.zeros((S, A))
    best = g.integers(1, A, size=S)
    mean_reward[np.arange(S), best] = 1.0
    mean_costs = g.uniform(0.0, 0.05, size=(K, S, A))
    mean_costs[:, :, 0] = 0.0
    budgets = np.full(K, 0.92 / (1.0 - gamma))
    return CmdpInstance(
        num_states=S, num_actions=A, gamma=gamma, kernel=kernel,
        mean_reward=mean_reward, mean_costs=mean_costs, budgets=budgets,
        init_dist=np.full(S, 1.0 / S), noise=0.05, scale=1.1)


def deterministic_instance(gamma: float = 0.5) -> CmdpInstance:
    """Two states, two actions, deterministic two-cycle kernel, zero noise."""
    kernel = np.zeros((2, 2, 2))
    kernel[0, :, 1] = 1.0
    kernel[1, :, 0] = 1.0
    return CmdpInstance(
        num_states=2, num_actions=2, gamma=gamma, kernel=kernel,
        mean_reward=np.array([[0.2, 0.9], [0.4, 0.1]]),
        mean_costs=np.zeros((0, 2, 2)), budgets=np.zeros(0),
        init_dist=np.array([1.0, 0.0]), noise=0.0, scale=1.0)


@pytest.fixture
def small_instance():
    return unit_instance(seed=11)
