"""Fixed-capacity FIFO replay with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rcac.diffcompute.checkpoint import load_arrays, save_arrays
from rcac.errors import ConfigurationError, UsageError


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    """Columnar sample. Observations are float32 scaled to [0, 1]."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.rewards)


def to_float(obs_u8: np.ndarray) -> np.ndarray:
    return obs_u8.astype(np.float32) * np.float32(1.0 / 255.0)


class ReplayBuffer:
    """Ring buffer of transitions; observations kept as the uint8 bytes received.

    Storage is allocated up front with ``np.zeros``, so untouched slots
    cost no resident memory until written.
    """

    def __init__(self, obs_shape, action_dim, capacity=80_000):
        if capacity < 1:
            raise ConfigurationError("capacity must be positive")
        self.capacity = capacity
        self.obs_shape = tuple(obs_shape)
        self.action_dim = action_dim
        self.obs = np.zeros((capacity,) + self.obs_shape, dtype=np.uint8)
        self.next_obs = np.zeros((capacity,) + self.obs_shape, dtype=np.uint8)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.index = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, t: Transition) -> None:
        if t.obs.shape != self.obs_shape or t.next_obs.shape != self.obs_shape:
            raise ConfigurationError(f"observation shape must be {self.obs_shape}")
        i = self.index
        self.obs[i] = t.obs
        self.next_obs[i] = t.next_obs
        self.actions[i] = np.asarray(t.action, dtype=np.float32).reshape(self.action_dim)
        self.rewards[i] = t.reward
        self.dones[i] = float(t.done)
        self.index = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise UsageError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = self.sample_indices(n, rng)
        return Batch(to_float(self.obs[idx]), self.actions[idx].copy(), self.rewards[idx].copy(),
                     to_float(self.next_obs[idx]), self.dones[idx].copy(), idx)

    def nbytes_per_transition(self) -> int:
        obs = int(np.prod(self.obs_shape))
        return 2 * obs + 4 * self.action_dim + 4 + 4

    def save(self, path) -> None:
        n = self.size
        save_arrays(path, {
            "obs": self.obs[:n], "next_obs": self.next_obs[:n], "actions": self.actions[:n],
            "rewards": self.rewards[:n], "dones": self.dones[:n],
        }, {"kind": "replay", "capacity": self.capacity, "index": self.index, "size": n})

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "replay":
            raise ConfigurationError(f"{path} is not a replay snapshot")
        buf = cls(arrays["obs"].shape[1:], arrays["actions"].shape[1], meta["capacity"])
        n = meta["size"]
        for name in ("obs", "next_obs", "actions", "rewards", "dones"):
            getattr(buf, name)[:n] = arrays[name]
        buf.size, buf.index = n, meta["index"]
        return buf
