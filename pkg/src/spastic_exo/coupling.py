"""Exoskeleton link, saturating actuator and compliant strap/slider attachment.

The attachment is reduced to one rotational strap compliance (both pin joints
lumped, with a stiff stop past the pin range) plus one prismatic slider that
absorbs axial load and feeds a bounded misalignment torque back to the knee.
Angles follow the flexion convention of :mod:`musculoskeletal`; torques are
positive in the extension direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .musculoskeletal import GRAVITY, check_finite, stop_torque

MAX_TORQUE = 100.0


@dataclass(frozen=True)
class CouplingParams:
    strap_stiffness: float = 60.0
    strap_damping: float = 1.5
    pin_range: float = math.radians(15.0)
    pin_stop_stiffness: float = 3000.0
    pin_stop_damping: float = 10.0
    slider_stiffness: float = 5000.0
    slider_damping: float = 50.0
    slider_retention: float = 0.97
    slider_mass: float = 0.3
    slider_range: float = 0.02
    misalignment_lever: float = 0.05
    exo_link_inertia: float = 0.06
    exo_com_distance: float = 0.2
    exo_link_mass: float = 1.5
    exo_damping: float = 0.1
    # extension-angle range of the exo joint, degrees
    exo_range_deg: tuple = (-15.0, 95.0)
    exo_stop_stiffness: float = 3000.0
    exo_stop_damping: float = 20.0

    def __post_init__(self):
        object.__setattr__(self, "exo_range_deg", tuple(float(x) for x in self.exo_range_deg))
        for name in ("strap_stiffness", "strap_damping", "pin_range", "pin_stop_stiffness",
                     "pin_stop_damping", "slider_stiffness", "slider_damping", "slider_mass", "slider_range",
                     "misalignment_lever", "exo_link_inertia", "exo_com_distance",
                     "exo_link_mass", "exo_stop_stiffness", "exo_stop_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.exo_damping < 0:
            raise ValueError("exo_damping must be >= 0")
        if not 0 < self.slider_retention <= 1:
            raise ValueError("slider_retention must lie in (0, 1]")
        lo, hi = self.exo_range_deg
        if not lo < hi:
            raise ValueError("exo_range_deg must be (low, high) with low < high")


@dataclass
class ExoState:
    theta_exo: np.ndarray | float
    omega_exo: np.ndarray | float
    slider_pos: np.ndarray | float = 0.0
    slider_vel: np.ndarray | float = 0.0


@dataclass(frozen=True)
class ActuatorCommand:
    u: float

    def __post_init__(self):
        object.__setattr__(self, "u", float(np.clip(self.u, -1.0, 1.0)))


def actuator_torque(cmd):
    """Normalised command -> joint torque, saturated at +-100 N m."""
    u = cmd.u if isinstance(cmd, ActuatorCommand) else cmd
    return np.clip(MAX_TORQUE * np.asarray(u, dtype=float), -MAX_TORQUE, MAX_TORQUE)


def strap_torque(exo: ExoState, ms_theta, ms_omega, c: CouplingParams = CouplingParams()):
    """Torque the straps apply to the knee (the exo link receives the negation).

    The relative angle is taken in the extension direction, so an exo that
    leads the knee toward extension pulls it along.
    """
    delta = np.asarray(ms_theta) - np.asarray(exo.theta_exo)
    delta_dot = np.asarray(ms_omega) - np.asarray(exo.omega_exo)
    tau = c.strap_stiffness * delta + c.strap_damping * delta_dot
    excess = np.abs(delta) - c.pin_range
    stop = c.pin_stop_stiffness * np.sign(delta) * excess + c.pin_stop_damping * delta_dot
    return tau + np.where(excess > 0, stop, 0.0)


def slider_step(exo: ExoState, strap, dt: float, c: CouplingParams = CouplingParams()):
    """Advance the slider and return ``(slider_pos, slider_vel, misalignment_torque)``.

    The strap load reaches the slider as an axial force ``strap / lever``; a
    spring-damper resists it and the velocity keeps ``slider_retention`` of its
    value each step. Travel is projected onto the hard stops. The torque on the
    knee is the transmitted spring-damper force times the lever.
    """
    if not 0 < dt <= 0.005:
        raise ValueError(f"dt must lie in (0, 0.005], got {dt}")
    x = np.asarray(exo.slider_pos, dtype=float)
    v = np.asarray(exo.slider_vel, dtype=float)
    load = np.asarray(strap) / c.misalignment_lever
    restoring = c.slider_stiffness * x + c.slider_damping * v
    v = (v + dt * (load - restoring) / c.slider_mass) * c.slider_retention
    x = x + dt * v
    hit = np.abs(x) >= c.slider_range
    x = np.clip(x, -c.slider_range, c.slider_range)
    v = np.where(hit & (np.sign(v) == np.sign(x)), 0.0, v)
    transmitted = c.slider_stiffness * x + c.slider_damping * v
    return x, v, transmitted * c.misalignment_lever


def exo_gravity_torque(theta_exo, c: CouplingParams):
    return -c.exo_link_mass * GRAVITY * c.exo_com_distance * np.cos(theta_exo)


def exo_step(exo: ExoState, cmd, reaction_torques, dt: float, c: CouplingParams = CouplingParams()) -> ExoState:
    """Semi-implicit Euler on the exo link.

    ``reaction_torques`` is the total torque the attachment applies to the
    knee this step; the link receives its negation.
    """
    if not 0 < dt <= 0.005:
        raise ValueError(f"dt must lie in (0, 0.005], got {dt}")
    q = math.pi / 2 - np.asarray(exo.theta_exo, dtype=float)
    q_dot = -np.asarray(exo.omega_exo, dtype=float)
    lo, hi = math.radians(c.exo_range_deg[0]), math.radians(c.exo_range_deg[1])
    tau = (actuator_torque(cmd) - reaction_torques + exo_gravity_torque(exo.theta_exo, c)
           + stop_torque(q, q_dot, lo, hi, c.exo_stop_stiffness, c.exo_stop_damping)
           - c.exo_damping * q_dot)
    q_dot = q_dot + dt * tau / c.exo_link_inertia
    q = q + dt * q_dot
    check_finite("exo", q, q_dot)
    return ExoState(theta_exo=math.pi / 2 - q, omega_exo=-q_dot,
                    slider_pos=exo.slider_pos, slider_vel=exo.slider_vel)


def interaction_torque(strap, mis, spastic):
    """Net torque the attachment and the reflexes apply to the knee."""
    return strap + mis + spastic
