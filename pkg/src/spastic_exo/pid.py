"""PID torque controller on knee position error (the comparison baseline)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import MAX_TORQUE
from .environment import OBS_INDEX


@dataclass(frozen=True)
class PidGains:
    """Gains in SI units on the flexion-angle error (rad)."""

    kp: float = 7.0
    ki: float = 40.0
    kd: float = 0.05
    # clamp on the integral contribution, N m
    integral_limit: float = 100.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("PID gains must be >= 0")
        if not self.integral_limit > 0:
            raise ValueError("integral_limit must be positive")


@dataclass
class PidState:
    integral: np.ndarray | float = 0.0  # accumulated ki * error * dt, N m
    prev_error: np.ndarray | float = np.nan  # nan until the first call


def reset_state(n: int | None = None) -> PidState:
    if n is None:
        return PidState()
    return PidState(integral=np.zeros(n), prev_error=np.full(n, np.nan))


def pid_action(error, state: PidState, dt: float, gains: PidGains = PidGains()):
    """One controller update; returns ``(u, new_state)`` with ``u`` in [-1, 1].

    Positive error (knee more flexed than the target) commands extension.
    The derivative uses the current error on the first call, so there is no
    kick at episode start.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    error = np.asarray(error, dtype=float)
    prev = np.where(np.isnan(state.prev_error), error, state.prev_error)
    integral = np.clip(state.integral + gains.ki * error * dt, -gains.integral_limit, gains.integral_limit)
    tau = gains.kp * error + integral + gains.kd * (error - prev) / dt
    u = np.clip(tau, -MAX_TORQUE, MAX_TORQUE) / MAX_TORQUE
    return u, PidState(integral=integral, prev_error=error)


class PidController:
    """Batched controller reading knee angle and target from the observation."""

    name = "pid"

    def __init__(self, gains: PidGains = PidGains(), dt: float = 0.01):
        self.gains = gains
        self.dt = dt
        self.state = reset_state()

    def reset(self, n: int | None = None):
        self.state = reset_state(n)

    def __call__(self, obs):
        obs = np.asarray(obs)
        error = obs[..., OBS_INDEX["knee_angle"]] - obs[..., OBS_INDEX["target_angle"]]
        u, self.state = pid_action(error, self.state, self.dt, self.gains)
        return u
