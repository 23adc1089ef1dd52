"""Four-term reward: pose tracking, interaction torque, knee velocity, actuation.

Penalty terms enter negatively. All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class RewardConfig:
    sigma_sq: float = 0.25
    tau_threshold: float = 75.0
    tau_norm: float = 100.0
    bonus: float = 0.01
    bonus_pos_band: float = 0.05
    bonus_vel_band: float = 0.05
    omega_norm: float = 10.0
    w_pose: float = 1.0
    w_inter: float = 1.0
    w_vel: float = 1.0
    w_act: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name == "bonus":
                if value < 0:
                    raise ValueError("bonus must be >= 0")
            elif not value > 0:
                raise ValueError(f"{name} must be positive")
        if not self.tau_threshold < self.tau_norm:
            raise ValueError("tau_threshold must be below tau_norm")


@dataclass(frozen=True)
class StepSnapshot:
    pose_error: float
    knee_vel: float = 0.0
    interaction_torque: float = 0.0
    prev_interaction_torque: float = 0.0
    action: float = 0.0
    prev_action: float = 0.0
    prev_knee_vel: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.pose_error) < 0):
            raise ValueError("pose_error must be >= 0")


def settling_bonus(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    inside = (np.asarray(s.pose_error) < c.bonus_pos_band) & (np.abs(s.knee_vel) < c.bonus_vel_band)
    return np.where(inside, c.bonus, 0.0)


def r_pose(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    e = np.asarray(s.pose_error, dtype=float)
    return c.w_pose * (np.exp(-e / (2.0 * c.sigma_sq)) - e) + settling_bonus(s, c)


def r_inter(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    tau = np.asarray(s.interaction_torque, dtype=float)
    d_tau = tau - s.prev_interaction_torque
    over = np.where(np.abs(tau) > c.tau_threshold, tau * tau, 0.0)
    return -c.w_inter * (d_tau * d_tau + over) / (c.tau_norm * c.tau_norm)


def r_act(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    du = np.asarray(s.action, dtype=float) - s.prev_action
    return -c.w_act * du * du


def r_vel(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    return -c.w_vel * np.abs(np.asarray(s.knee_vel, dtype=float) - s.prev_knee_vel) / c.omega_norm


def total_reward(s: StepSnapshot, c: RewardConfig = RewardConfig()):
    return r_pose(s, c) + r_inter(s, c) + r_vel(s, c) + r_act(s, c)
