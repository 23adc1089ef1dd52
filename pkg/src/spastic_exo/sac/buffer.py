"""Fixed-capacity FIFO replay memory with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Ring storage in float32.

    Arrays are allocated with ``np.zeros`` so untouched pages of a large
    buffer cost no memory.
    """

    def __init__(self, capacity: int, obs_dim: int):
        if capacity < 1 or obs_dim < 1:
            raise ValueError("capacity and obs_dim must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((self.capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros(self.capacity, dtype=np.float32)
        self.reward = np.zeros(self.capacity, dtype=np.float32)
        self.done = np.zeros(self.capacity, dtype=np.float32)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done):
        i = self.cursor
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size > self.size:
            raise ValueError(f"batch of {batch_size} exceeds occupancy {self.size}")
        return rng.integers(0, self.size, size=batch_size)

    def gather(self, idx) -> Batch:
        return Batch(self.obs[idx].astype(float), self.action[idx].astype(float),
                     self.reward[idx].astype(float), self.next_obs[idx].astype(float),
                     self.done[idx].astype(float))

    def sample(self, batch_size: int, rng) -> Batch:
        return self.gather(self.sample_indices(batch_size, rng))
