"""Transition storage for SAC (replay) and PPO (rollouts), plus running normalisation statistics."""
from dataclasses import dataclass, field
from typing import List

import numpy as np

from core.errors import ShapeError


@dataclass
class ReplayBatch:
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]


class ReplayBuffer:
    """Circular store of (s, a, r, s', done); sampling only ever touches the filled region."""

    def __init__(self, capacity, observation_dim, action_dim):
        if capacity < 1:
            raise ValueError("replay capacity must be >= 1")
        self.capacity = int(capacity)
        self.observations = np.zeros((self.capacity, observation_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_observations = np.zeros((self.capacity, observation_dim))
        self.dones = np.zeros(self.capacity)
        self.cursor = 0
        self.full = False

    def __len__(self):
        return self.capacity if self.full else self.cursor

    def add(self, observation, action, reward, next_observation, done):
        self.observations[self.cursor] = observation
        self.actions[self.cursor] = action
        self.rewards[self.cursor] = reward
        self.next_observations[self.cursor] = next_observation
        self.dones[self.cursor] = float(done)
        self.cursor += 1
        if self.cursor == self.capacity:
            self.full = True
            self.cursor = 0

    def sample(self, batch_size, rng) -> ReplayBatch:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        idx = rng.integers(0, len(self), size=batch_size)
        return ReplayBatch(
            observations=self.observations[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_observations=self.next_observations[idx],
            dones=self.dones[idx],
        )

    def sample_observations(self, count, rng):
        idx = rng.integers(0, len(self), size=min(count, len(self)))
        return self.observations[idx]


class RunningMeanStd:
    """Streaming mean/variance with the parallel (Chan et al.) merge rule."""

    def __init__(self, shape=(), epsilon=1e-4):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = float(epsilon)

    def update(self, batch):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[0] == 0:
            return
        batch_mean = batch.mean(axis=0)
        batch_var = batch.var(axis=0)
        batch_count = batch.shape[0]
        delta = batch_mean - self.mean
        total = self.count + batch_count
        new_mean = self.mean + delta * batch_count / total
        m2 = self.var * self.count + batch_var * batch_count + np.square(delta) * self.count * batch_count / total
        self.mean, self.var, self.count = new_mean, m2 / total, total

    def copy(self):
        clone = RunningMeanStd(self.mean.shape)
        clone.mean, clone.var, clone.count = self.mean.copy(), self.var.copy(), self.count
        return clone


def gae_compute(rewards, values, dones, last_value, gamma, gae_lambda):
    """Generalised advantage estimation over one worker's trajectory.

    dones[t] marks that the episode ended with the transition at t, so nothing bootstraps
    across it. Returns (advantages, returns = advantages + values).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not rewards.shape == values.shape == dones.shape:
        raise ShapeError(f"rewards {rewards.shape}, values {values.shape} and dones {dones.shape} differ")
    advantages = np.zeros_like(rewards)
    next_value = float(last_value)
    running = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * live * next_value - values[t]
        running = delta + gamma * gae_lambda * live * running
        advantages[t] = running
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class WorkerRollout:
    """One worker's contribution to a PPO rollout, before normalisation is applied."""

    raw_observations: np.ndarray  # (steps, obs_dim)
    observations: np.ndarray  # normalised with the frozen statistics
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    raw_rewards: np.ndarray
    dones: np.ndarray
    terminal_values: np.ndarray  # V(final obs) at truncations, 0 elsewhere
    last_value: float
    noise_matrices: List[np.ndarray] = field(default_factory=list)
    episodes: list = field(default_factory=list)  # (step index, return, continuity cost)

    def __len__(self):
        return self.raw_rewards.shape[0]


@dataclass
class RolloutBuffer:
    """Per-worker arrays stacked in worker order, shape (workers, steps, ...)."""

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    advantages: np.ndarray = None
    returns: np.ndarray = None

    @classmethod
    def from_workers(cls, rollouts, rewards):
        """``rewards`` holds the processed (normalised and bootstrapped) rewards per worker."""
        if not rollouts:
            raise ValueError("a rollout needs at least one worker")
        lengths = {len(r) for r in rollouts}
        if len(lengths) != 1:
            raise ShapeError(f"workers returned different rollout lengths {sorted(lengths)}")
        return cls(
            observations=np.stack([r.observations for r in rollouts]),
            actions=np.stack([r.actions for r in rollouts]),
            log_probs=np.stack([r.log_probs for r in rollouts]),
            values=np.stack([r.values for r in rollouts]),
            rewards=np.stack(rewards),
            dones=np.stack([r.dones for r in rollouts]),
            last_values=np.array([r.last_value for r in rollouts]),
        )

    @property
    def n_workers(self):
        return self.rewards.shape[0]

    @property
    def n_steps(self):
        return self.rewards.shape[1]

    def compute_advantages(self, gamma, gae_lambda):
        advantages, returns = [], []
        for w in range(self.n_workers):
            adv, ret = gae_compute(self.rewards[w], self.values[w], self.dones[w], self.last_values[w], gamma, gae_lambda)
            advantages.append(adv)
            returns.append(ret)
        self.advantages = np.stack(advantages)
        self.returns = np.stack(returns)

    def flat(self):
        """Flatten (workers, steps) into one sample axis, worker-major."""
        if self.advantages is None:
            raise ValueError("compute_advantages() must run before flattening")
        n = self.n_workers * self.n_steps
        return {
            "observations": self.observations.reshape(n, -1),
            "actions": self.actions.reshape(n, -1),
            "log_probs": self.log_probs.reshape(n),
            "advantages": self.advantages.reshape(n),
            "returns": self.returns.reshape(n),
            "values": self.values.reshape(n),
        }
