"""Tanh-squashed Gaussian policy on top of a two-output actor network."""

from __future__ import annotations

import math

import numpy as np

from .mlp import Mlp

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def log1m_tanh_sq(u):
    """``log(1 - tanh(u)^2)`` without cancellation for large ``|u|``."""
    return 2.0 * (_LOG2 - u - softplus(-2.0 * u))


def split_heads(out):
    """Network output (n, 2) -> ``(mean, log_std, in_range)`` with log_std clamped."""
    mean = out[:, 0]
    raw = out[:, 1]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    in_range = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
    return mean, log_std, in_range


def squashed_log_prob(u, mean, log_std):
    """Log density of ``a = tanh(u)`` for ``u ~ N(mean, exp(log_std)^2)``."""
    xi = (u - mean) / np.exp(log_std)
    return -0.5 * xi * xi - log_std - _HALF_LOG_2PI - log1m_tanh_sq(u)


def squashed_density(a, mean, log_std):
    """Density of the squashed action at ``a`` in (-1, 1)."""
    a = np.asarray(a, dtype=float)
    return np.exp(squashed_log_prob(np.arctanh(a), mean, log_std))


class PolicySample:
    __slots__ = ("action", "log_prob", "mean", "log_std", "in_range", "xi", "cache")

    def __init__(self, action, log_prob, mean, log_std, in_range, xi, cache):
        self.action = action
        self.log_prob = log_prob
        self.mean = mean
        self.log_std = log_std
        self.in_range = in_range
        self.xi = xi
        self.cache = cache


def sample_action(actor: Mlp, obs, rng=None, deterministic: bool = False) -> PolicySample:
    """Reparameterised sample ``a = tanh(mean + std * xi)`` for a batch of observations.

    With ``deterministic`` the noise is zero and ``a = tanh(mean)``.
    """
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    out, cache = actor.forward(obs)
    mean, log_std, in_range = split_heads(out)
    if deterministic:
        xi = np.zeros_like(mean)
    else:
        xi = np.random.default_rng(rng).standard_normal(mean.shape)
    u = mean + np.exp(log_std) * xi
    a = np.tanh(u)
    log_prob = -0.5 * xi * xi - log_std - _HALF_LOG_2PI - log1m_tanh_sq(u)
    return PolicySample(a, log_prob, mean, log_std, in_range, xi, cache)


def actor_output_grad(s: PolicySample, dloss_da, dloss_dlogp):
    """Chain rule from gradients w.r.t. ``(action, log_prob)`` to the actor's raw output.

    Uses ``dlogp/dmean = 2a`` and ``dlogp/dlog_std = -1 + 2a * std * xi``
    (noise held fixed).
    """
    a = s.action
    sxi = np.exp(s.log_std) * s.xi
    da_du = 1.0 - a * a
    g_mean = dloss_da * da_du + dloss_dlogp * 2.0 * a
    g_log_std = (dloss_da * da_du * sxi + dloss_dlogp * (-1.0 + 2.0 * a * sxi)) * s.in_range
    return np.stack([g_mean, g_log_std], axis=1)


class DeterministicPolicy:
    """Batched controller ``obs -> tanh(mean)`` for evaluation."""

    name = "sac"

    def __init__(self, actor: Mlp):
        self.actor = actor

    def __call__(self, obs):
        return sample_action(self.actor, obs, deterministic=True).action
