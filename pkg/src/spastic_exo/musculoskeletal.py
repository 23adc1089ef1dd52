"""Reduced knee: a shank pendulum about a fixed thigh, driven by 11 Hill muscles.

State angles follow the flexion convention (``theta = pi/2`` at the start
posture, 0 at full extension). Torques are positive in the extension
direction, i.e. they drive the *extension angle* ``q = pi/2 - theta`` up, so
the equations of motion are integrated in ``q`` and converted back.

Muscle geometry uses constant moment arms and a rigid tendon; fibre length is
linear in ``q``. All numbers here are declared defaults, not measured data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .spasticity import DEFAULT_GROUPS, MuscleGroupMap, SubjectParams, spastic_activations

GRAVITY = 9.81
FL_WIDTH = 0.45
FV_CONCENTRIC_SHAPE = 0.25
FV_ECCENTRIC_PLATEAU = 1.4
# eccentric shape matched to the concentric slope at v=0 (C1 curve)
FV_ECCENTRIC_SHAPE = (FV_ECCENTRIC_PLATEAU - 1.0) / (1.0 + 1.0 / FV_CONCENTRIC_SHAPE)
PASSIVE_SHAPE = 4.0
PASSIVE_STRAIN_AT_FMAX = 0.6


class SimulationError(FloatingPointError):
    """Raised when the integrated state stops being finite."""


@dataclass(frozen=True)
class MuscleParams:
    """One rigid-tendon muscle.

    ``moment_arm`` is signed: positive extends the knee. ``ref_angle`` is the
    extension angle (degrees, table convention) at which the fibre sits at its
    optimal length.
    """

    id: str
    f_max: float
    moment_arm: float
    optimal_fiber_length: float
    ref_angle: float
    fl_width: float = FL_WIDTH
    fv_max_shortening_velocity: float = 10.0

    def __post_init__(self):
        if self.f_max <= 0:
            raise ValueError(f"{self.id}: f_max must be positive")
        if self.optimal_fiber_length <= 0:
            raise ValueError(f"{self.id}: optimal_fiber_length must be positive")
        if not 0 < self.fl_width <= 1:
            raise ValueError(f"{self.id}: fl_width must lie in (0, 1]")
        if self.fv_max_shortening_velocity <= 0:
            raise ValueError(f"{self.id}: fv_max_shortening_velocity must be positive")


def _muscle(id, f_max, arm, l_opt, ref):
    return MuscleParams(id=id, f_max=f_max, moment_arm=arm, optimal_fiber_length=l_opt, ref_angle=ref)


FLEXOR_ARM = -0.035
EXTENSOR_ARM = 0.045

DEFAULT_MUSCLES = (
    _muscle("GastrocLat", 600.0, FLEXOR_ARM, 0.065, 85.0),
    _muscle("GastrocMed", 1100.0, FLEXOR_ARM, 0.060, 85.0),
    _muscle("Semimem", 1300.0, FLEXOR_ARM, 0.080, 85.0),
    _muscle("Semiten", 800.0, FLEXOR_ARM, 0.200, 85.0),
    _muscle("BicFemLong", 1000.0, FLEXOR_ARM, 0.100, 85.0),
    _muscle("BicFemShort", 800.0, FLEXOR_ARM, 0.110, 85.0),
    _muscle("Gracilis", 250.0, EXTENSOR_ARM, 0.230, -5.0),
    _muscle("VastusMed", 1500.0, EXTENSOR_ARM, 0.100, -5.0),
    _muscle("VastusLat", 1500.0, EXTENSOR_ARM, 0.100, -5.0),
    _muscle("VastusInt", 1500.0, EXTENSOR_ARM, 0.100, -5.0),
    _muscle("RectusFem", 1200.0, EXTENSOR_ARM, 0.076, -5.0),
)


class MuscleArrays:
    """Column view of a muscle list, attribute-compatible with MuscleParams."""

    def __init__(self, muscles: Sequence[MuscleParams]):
        self.muscles = tuple(muscles)
        self.id = tuple(m.id for m in self.muscles)
        for name in ("f_max", "moment_arm", "optimal_fiber_length", "ref_angle",
                     "fl_width", "fv_max_shortening_velocity"):
            setattr(self, name, np.array([getattr(m, name) for m in self.muscles], dtype=float))

    def __len__(self):
        return len(self.muscles)


def check_muscles(muscles: Sequence[MuscleParams], groups: MuscleGroupMap = DEFAULT_GROUPS) -> MuscleArrays:
    """Validate a muscle list against the group map and return its arrays.

    Muscles must follow ``groups.muscles`` order; flexor arms are negative and
    extensor arms positive.
    """
    ids = tuple(m.id for m in muscles)
    if ids != groups.muscles:
        raise ValueError(f"muscle order {ids} does not match group map {groups.muscles}")
    for m in muscles:
        if m.id in groups.flexors and not m.moment_arm < 0:
            raise ValueError(f"flexor {m.id} needs a negative moment arm")
        if m.id in groups.extensors and not m.moment_arm > 0:
            raise ValueError(f"extensor {m.id} needs a positive moment arm")
    return MuscleArrays(muscles)


@dataclass(frozen=True)
class BodyParams:
    shank_mass: float = 4.0
    com_distance: float = 0.25
    inertia_about_knee: float = 0.35
    viscous_damping: float = 3.0
    joint_stop_stiffness: float = 3000.0
    joint_stop_damping: float = 50.0
    # extension-angle range of motion, degrees
    range_deg: tuple = (-45.0, 95.0)

    def __post_init__(self):
        object.__setattr__(self, "range_deg", tuple(float(x) for x in self.range_deg))
        for name in ("shank_mass", "com_distance", "inertia_about_knee",
                     "joint_stop_stiffness", "joint_stop_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.viscous_damping < 0:
            raise ValueError("viscous_damping must be >= 0")
        lo, hi = self.range_deg
        if not lo < hi:
            raise ValueError("range_deg must be (low, high) with low < high")


@dataclass
class MsState:
    """Human knee state; arrays broadcast over a leading batch dimension."""

    theta: np.ndarray | float
    omega: np.ndarray | float
    muscle_activations: np.ndarray = field(default_factory=lambda: np.zeros(11))
    muscle_forces: np.ndarray = field(default_factory=lambda: np.zeros(11))
    spastic_torque: np.ndarray | float = 0.0

    @property
    def extension(self):
        return math.pi / 2 - np.asarray(self.theta)

    @property
    def extension_rate(self):
        return -np.asarray(self.omega)


def deg_to_rad(x):
    return np.asarray(x) * (math.pi / 180.0)


def rad_to_deg(x):
    return np.asarray(x) * (180.0 / math.pi)


# ---------------------------------------------------------------------------
# muscle mechanics


def fiber_length_norm(q, m):
    """Normalised fibre length at extension angle ``q`` (rad)."""
    return 1.0 - m.moment_arm * (q - np.radians(m.ref_angle)) / m.optimal_fiber_length


def fiber_velocity_norm(q_dot, m):
    """Fibre lengthening velocity in units of the maximum shortening velocity."""
    return -m.moment_arm * q_dot / (m.optimal_fiber_length * m.fv_max_shortening_velocity)


def force_length(l_norm, width=FL_WIDTH):
    return np.exp(-(((l_norm - 1.0) / width) ** 2))


def force_velocity(v_norm):
    """Hyperbolic force-velocity curve: 0 at max shortening, 1 isometric, 1.4 plateau."""
    v = np.asarray(v_norm, dtype=float)
    vs = np.clip(v, -1.0, 0.0)
    concentric = (1.0 + vs) / (1.0 - vs / FV_CONCENTRIC_SHAPE)
    ve = np.maximum(v, 0.0)
    eccentric = FV_ECCENTRIC_PLATEAU - (FV_ECCENTRIC_PLATEAU - 1.0) * FV_ECCENTRIC_SHAPE / (FV_ECCENTRIC_SHAPE + ve)
    return np.where(v < 0.0, concentric, eccentric)


def passive_force_length(l_norm):
    strain = np.maximum(np.asarray(l_norm, dtype=float) - 1.0, 0.0)
    return (np.exp(PASSIVE_SHAPE * strain / PASSIVE_STRAIN_AT_FMAX) - 1.0) / (math.exp(PASSIVE_SHAPE) - 1.0)


def hill_force(activation, l_norm, v_norm, m):
    active = activation * force_length(l_norm, m.fl_width) * force_velocity(v_norm)
    return m.f_max * np.maximum(active + passive_force_length(l_norm), 0.0)


def muscle_forces(q, q_dot, activations, m):
    """Forces of every muscle; ``q`` and ``q_dot`` broadcast against the muscle axis."""
    q = np.asarray(q, dtype=float)[..., None]
    q_dot = np.asarray(q_dot, dtype=float)[..., None]
    return hill_force(activations, fiber_length_norm(q, m), fiber_velocity_norm(q_dot, m), m)


def spastic_knee_torque(forces, m):
    """Net muscle torque (+ extends) from per-muscle forces (muscle axis last)."""
    return np.sum(forces * m.moment_arm, axis=-1)


def gravity_torque(theta, b: BodyParams):
    """Shank weight torque, + extends; ``theta`` is the flexion angle."""
    return -b.shank_mass * GRAVITY * b.com_distance * np.cos(theta)


def stop_torque(q, q_dot, lo, hi, stiffness, damping):
    """Spring-damper end stops on an extension-type coordinate (+ drives q up)."""
    over = q - hi
    under = lo - q
    return np.where(over > 0, -stiffness * over - damping * q_dot,
                    np.where(under > 0, stiffness * under - damping * q_dot, 0.0))


def check_finite(label, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SimulationError(f"non-finite {label} state: {a!r}")


def ms_step(state: MsState, external_torque, subject: SubjectParams | None, dt: float,
            body: BodyParams = BodyParams(), muscles: MuscleArrays | None = None,
            groups: MuscleGroupMap = DEFAULT_GROUPS) -> MsState:
    """Advance the knee by one semi-implicit Euler step.

    Reflex activations are refreshed from the pre-step state. ``muscles=None``
    runs the bare pendulum; ``subject=None`` keeps the muscles passive.
    """
    if not 0 < dt <= 0.005:
        raise ValueError(f"dt must lie in (0, 0.005], got {dt}")
    q = state.extension
    q_dot = state.extension_rate
    if muscles is not None and len(muscles):
        if subject is None:
            act = np.zeros(np.shape(q) + (len(muscles),))
        else:
            act = spastic_activations(np.degrees(q), q_dot, subject, groups)
        forces = muscle_forces(q, q_dot, act, muscles)
        tau_sp = spastic_knee_torque(forces, muscles)
    else:
        act = np.zeros(np.shape(q) + (0,))
        forces = act
        tau_sp = np.zeros(np.shape(q))
    lo, hi = np.radians(body.range_deg[0]), np.radians(body.range_deg[1])
    tau = (tau_sp + gravity_torque(state.theta, body)
           + stop_torque(q, q_dot, lo, hi, body.joint_stop_stiffness, body.joint_stop_damping)
           - body.viscous_damping * q_dot + external_torque)
    q_dot = q_dot + dt * tau / body.inertia_about_knee
    q = q + dt * q_dot
    check_finite("knee", q, q_dot)
    return MsState(theta=math.pi / 2 - q, omega=-q_dot, muscle_activations=act,
                   muscle_forces=forces, spastic_torque=tau_sp)


def pendulum_energy(state: MsState, body: BodyParams):
    """Kinetic plus gravitational energy, zero potential with the shank horizontal."""
    potential = -body.shank_mass * GRAVITY * body.com_distance * np.sin(state.theta)
    return 0.5 * body.inertia_about_knee * np.asarray(state.omega) ** 2 + potential
