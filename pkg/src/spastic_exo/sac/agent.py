"""Soft actor-critic: twin critics, target critics and learned temperature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..environment import OBS_DIM
from .adam import Adam
from .buffer import Batch
from .mlp import Mlp, MlpSpec, soft_update
from .policy import actor_output_grad, sample_action

ACTION_DIM = 1


@dataclass(frozen=True)
class SacHyperparams:
    buffer_capacity: int = 5_000_000
    total_steps: int = 200_000
    lr: float = 1e-4
    tau: float = 0.05
    batch_size: int = 4096
    gamma: float = 0.99
    target_entropy: float = -1.0
    init_alpha: float = 1.0
    hidden: tuple = (64, 64)
    warmup_steps: int = 10_000
    updates_per_step: int = 1
    eval_every: int = 10_000
    eval_episodes: int = 5
    dtype: str = "float32"  # network arithmetic; float32 matches the checkpoint precision

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not self.init_alpha > 0:
            raise ValueError("init_alpha must be positive")
        for name in ("buffer_capacity", "batch_size", "eval_every", "eval_episodes", "updates_per_step"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("total_steps and warmup_steps must be >= 0")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if min(self.hidden, default=1) < 1:
            raise ValueError("hidden widths must be >= 1")


def actor_spec(obs_dim: int = OBS_DIM, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec((obs_dim, *hidden, 2))


def critic_spec(obs_dim: int = OBS_DIM, hidden=(64, 64)) -> MlpSpec:
    return MlpSpec((obs_dim + ACTION_DIM, *hidden, 1))


@dataclass
class UpdateInfo:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float
    entropy: float


def critic_targets(reward, done, next_q1, next_q2, next_log_prob, alpha, gamma):
    """Soft Bellman targets ``r + gamma * (1 - done) * (min(Q1', Q2') - alpha * logp')``."""
    soft_v = np.minimum(next_q1, next_q2) - alpha * next_log_prob
    return reward + gamma * (1.0 - done) * soft_v


class SacAgent:
    def __init__(self, hyper: SacHyperparams = SacHyperparams(), obs_dim: int = OBS_DIM, seed=None):
        self.hyper = hyper
        self.obs_dim = obs_dim
        rng = np.random.default_rng(seed)
        self.actor = Mlp(actor_spec(obs_dim, hyper.hidden), rng=rng, dtype=hyper.dtype)
        self.q1 = Mlp(critic_spec(obs_dim, hyper.hidden), rng=rng, dtype=hyper.dtype)
        self.q2 = Mlp(critic_spec(obs_dim, hyper.hidden), rng=rng, dtype=hyper.dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(hyper.init_alpha)])
        self.actor_opt = Adam(self.actor.params, hyper.lr)
        self.q1_opt = Adam(self.q1.params, hyper.lr)
        self.q2_opt = Adam(self.q2.params, hyper.lr)
        self.alpha_opt = Adam([self.log_alpha], hyper.lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def act(self, obs, rng=None, deterministic: bool = False):
        return sample_action(self.actor, obs, rng, deterministic).action

    @staticmethod
    def _qin(obs, action):
        return np.concatenate([obs, np.reshape(action, (-1, 1))], axis=1)

    def targets(self, batch: Batch, rng) -> np.ndarray:
        nxt = sample_action(self.actor, batch.next_obs, rng)
        qin = self._qin(batch.next_obs, nxt.action)
        return critic_targets(batch.reward, batch.done, self.q1_target(qin)[:, 0], self.q2_target(qin)[:, 0],
                              nxt.log_prob, self.alpha, self.hyper.gamma)

    def update(self, batch: Batch, rng) -> UpdateInfo:
        """One gradient step on critics, actor and temperature, then the target blend."""
        n = len(batch)
        if n == 0:
            raise ValueError("empty batch")
        alpha = self.alpha
        y = self.targets(batch, rng)

        qin = self._qin(batch.obs, batch.action)
        critic_loss = 0.0
        for net, opt in ((self.q1, self.q1_opt), (self.q2, self.q2_opt)):
            q, cache = net.forward(qin)
            diff = q[:, 0] - y
            critic_loss += 0.5 * float(np.mean(diff * diff))
            grads, _ = net.backward(cache, (diff / n)[:, None])
            opt.step(grads)
            net.touch()

        s = sample_action(self.actor, batch.obs, rng)
        qin = self._qin(batch.obs, s.action)
        q1, c1 = self.q1.forward(qin)
        q2, c2 = self.q2.forward(qin)
        use1 = q1[:, 0] <= q2[:, 0]
        q_min = np.where(use1, q1[:, 0], q2[:, 0])
        actor_loss = float(np.mean(alpha * s.log_prob - q_min))
        # dQ/da through whichever critic is smaller for each sample
        g1 = self.q1.backward(c1, (use1 / n)[:, None].astype(float))[1][:, -1]
        g2 = self.q2.backward(c2, (~use1 / n)[:, None].astype(float))[1][:, -1]
        dq_da = g1 + g2
        g_out = actor_output_grad(s, -dq_da, np.full(n, alpha / n))
        grads, _ = self.actor.backward(s.cache, g_out)
        self.actor_opt.step(grads)
        self.actor.touch()

        err = s.log_prob + self.hyper.target_entropy
        alpha_loss = float(-np.mean(self.log_alpha[0] * err))
        self.alpha_opt.step([np.array([-np.mean(err)])])

        soft_update(self.q1, self.q1_target, self.hyper.tau)
        soft_update(self.q2, self.q2_target, self.hyper.tau)
        self.updates += 1
        return UpdateInfo(critic_loss=critic_loss / 2.0, actor_loss=actor_loss, alpha_loss=alpha_loss,
                          alpha=self.alpha, entropy=float(-np.mean(s.log_prob)))

    def networks(self) -> dict:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}
