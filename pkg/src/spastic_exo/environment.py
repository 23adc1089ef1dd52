"""Episode orchestration for the knee-exoskeleton twin.

:class:`VecKneeExoEnv` runs ``num_envs`` independent episodes in lockstep with
numpy arrays; :class:`KneeExoEnv` is the single-episode view. Each control step
holds the command for ``control_dt / physics_dt`` physics substeps.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .coupling import (
    MAX_TORQUE,
    CouplingParams,
    ExoState,
    exo_step,
    interaction_torque,
    slider_step,
    strap_torque,
)
from .musculoskeletal import (
    DEFAULT_MUSCLES,
    BodyParams,
    MsState,
    MuscleParams,
    SimulationError,
    check_muscles,
    muscle_forces,
    ms_step,
    spastic_knee_torque,
)
from .reward import RewardConfig, StepSnapshot, total_reward
from .spasticity import (
    DEFAULT_GROUPS,
    MuscleGroupMap,
    SubjectBatch,
    SubjectParams,
    as_level,
    load_level_table,
    sample_subject,
    spastic_activations,
)

OBS_LAYOUT_VERSION = 1
TRACE_SCHEMA_VERSION = 1

OBS_LAYOUT = (
    ("knee_angle", "flexion angle, rad"),
    ("knee_velocity", "flexion rate, rad/s"),
    ("exo_angle", "exo flexion angle, rad"),
    ("exo_velocity", "exo flexion rate, rad/s"),
    ("slider_pos", "slider travel / slider range"),
    ("slider_vel", "slider velocity, m/s"),
    ("strap_angle", "knee minus exo flexion angle, rad"),
    ("strap_velocity", "knee minus exo flexion rate, rad/s"),
    *[(f"activation_{m}", "reflex activation, [0, 1]") for m in DEFAULT_GROUPS.muscles],
    *[(f"force_{m}", "muscle force / f_max") for m in DEFAULT_GROUPS.muscles],
    ("prev_action", "previous command, [-1, 1]"),
    ("pose_error", "knee minus target flexion angle, rad"),
    ("target_angle", "target flexion angle, rad"),
    ("interaction_torque", "interaction torque / 100 N m"),
)
OBS_DIM = len(OBS_LAYOUT)
OBS_INDEX = {name: i for i, (name, _) in enumerate(OBS_LAYOUT)}
_ACT = slice(OBS_INDEX[f"activation_{DEFAULT_GROUPS.muscles[0]}"], OBS_INDEX[f"activation_{DEFAULT_GROUPS.muscles[-1]}"] + 1)
_FORCE = slice(OBS_INDEX[f"force_{DEFAULT_GROUPS.muscles[0]}"], OBS_INDEX[f"force_{DEFAULT_GROUPS.muscles[-1]}"] + 1)

TRACE_COLUMNS = ("t", "theta_deg", "omega", "action", "tau_interaction", "reward", "level", "seed")


@dataclass(frozen=True)
class EnvConfig:
    start_angle: float = 90.0  # flexion, degrees
    target_angle: float = 7.0  # flexion, degrees
    episode_duration: float = 8.0
    control_dt: float = 0.01
    physics_dt: float = 0.001
    levels: tuple = (0, 1, 2, 3)
    noise_frac: float = 0.10
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(as_level(x).level_id for x in self.levels))
        if not self.levels:
            raise ValueError("levels must not be empty")
        if not 0 < self.physics_dt <= 0.005:
            raise ValueError("physics_dt must lie in (0, 0.005]")
        ratio = self.control_dt / self.physics_dt
        if self.control_dt <= 0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("control_dt must be an integer multiple of physics_dt")
        steps = self.episode_duration / self.control_dt
        if self.episode_duration <= 0 or abs(steps - round(steps)) > 1e-9:
            raise ValueError("episode_duration must be a whole number of control steps")
        if self.noise_frac < 0:
            raise ValueError("noise_frac must be >= 0")

    @property
    def substeps(self) -> int:
        return int(round(self.control_dt / self.physics_dt))

    @property
    def episode_steps(self) -> int:
        return int(round(self.episode_duration / self.control_dt))

    @property
    def amplitude_deg(self) -> float:
        return abs(self.start_angle - self.target_angle)


@dataclass(frozen=True)
class Plant:
    """Everything physical about the twin besides the episode settings."""

    body: BodyParams = BodyParams()
    muscles: tuple = DEFAULT_MUSCLES
    coupling: CouplingParams = CouplingParams()
    reward: RewardConfig = RewardConfig()
    level_table: Mapping[int, SubjectParams] | None = None
    groups: MuscleGroupMap = DEFAULT_GROUPS

    def __post_init__(self):
        object.__setattr__(self, "muscles", tuple(self.muscles))
        check_muscles(self.muscles, self.groups)


@dataclass
class Transition:
    obs: np.ndarray
    action: float
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Torques:
    """Torques of one physics substep (knee side; the exo gets the coupling negated)."""

    strap: np.ndarray
    misalignment: np.ndarray
    spastic: np.ndarray
    on_knee: np.ndarray
    on_exo: np.ndarray
    interaction: np.ndarray


class VecKneeExoEnv:
    """``num_envs`` independent episodes stepped together."""

    def __init__(self, config: EnvConfig = EnvConfig(), plant: Plant = Plant(), num_envs: int = 1):
        self.config = config
        self.plant = plant
        self.num_envs = int(num_envs)
        self._muscles = check_muscles(plant.muscles, plant.groups)
        self._table = plant.level_table if plant.level_table is not None else load_level_table()
        self._rng = np.random.default_rng(config.seed)
        self.target = math.radians(config.target_angle)
        lo, hi = plant.coupling.exo_range_deg
        if not lo <= 90.0 - config.target_angle <= hi:
            raise ValueError("target angle lies outside the exoskeleton joint range")
        self._done = True
        self.human = None
        self.exo = None

    # -- episode control ------------------------------------------------------

    def reset(self, level_override=None, seed=None) -> np.ndarray:
        """Start new episodes; returns observations of shape ``(num_envs, OBS_DIM)``.

        ``level_override`` and ``seed`` may be scalars (applied to every env) or
        sequences of length ``num_envs``. Missing seeds come from the env's own
        generator.
        """
        n = self.num_envs
        seeds = self._per_env(seed, "seed")
        seeds = [int(self._rng.integers(2**63)) if s is None else s for s in seeds]
        levels = self._per_env(level_override, "level_override")
        subjects, level_ids = [], []
        for lvl, s in zip(levels, seeds):
            rng = np.random.default_rng(s)
            lvl = int(rng.choice(self.config.levels)) if lvl is None else as_level(lvl).level_id
            subjects.append(sample_subject(lvl, rng, self.config.noise_frac, self._table))
            level_ids.append(lvl)
        self.seeds = np.array(seeds, dtype=np.uint64)
        self.levels = np.array(level_ids)
        self.subjects = SubjectBatch(subjects)

        theta0 = np.full(n, math.radians(self.config.start_angle))
        self.human = MsState(theta=theta0, omega=np.zeros(n))
        q = math.pi / 2 - theta0
        act = spastic_activations(np.degrees(q), np.zeros(n), self.subjects, self.plant.groups)
        forces = muscle_forces(q, np.zeros(n), act, self._muscles)
        self.human.muscle_activations = act
        self.human.muscle_forces = forces
        self.human.spastic_torque = spastic_knee_torque(forces, self._muscles)
        self.exo = ExoState(theta_exo=theta0.copy(), omega_exo=np.zeros(n),
                            slider_pos=np.zeros(n), slider_vel=np.zeros(n))
        self.steps = 0
        self.prev_action = np.zeros(n)
        self.prev_knee_vel = np.zeros(n)
        self.tau_interaction = interaction_torque(0.0, 0.0, self.human.spastic_torque)
        self._done = False
        return self.observe()

    def _per_env(self, value, label):
        if value is None or np.ndim(value) == 0:
            return [value] * self.num_envs
        value = list(value)
        if len(value) != self.num_envs:
            raise ValueError(f"{label} needs {self.num_envs} entries, got {len(value)}")
        return value

    @property
    def time(self) -> float:
        return self.steps * self.config.control_dt

    def physics_step(self, u) -> Torques:
        """Advance every env by one physics substep under command ``u``."""
        c, dt = self.plant.coupling, self.config.physics_dt
        h, exo = self.human, self.exo
        strap = strap_torque(exo, h.theta, h.omega, c)
        x, v, mis = slider_step(exo, strap, dt, c)
        exo.slider_pos, exo.slider_vel = x, v
        on_knee = strap + mis
        on_exo = -on_knee
        self.human = ms_step(h, on_knee, self.subjects, dt, self.plant.body, self._muscles, self.plant.groups)
        self.exo = exo_step(exo, u, -on_exo, dt, c)
        tau = interaction_torque(strap, mis, self.human.spastic_torque)
        return Torques(strap=strap, misalignment=mis, spastic=self.human.spastic_torque,
                       on_knee=on_knee, on_exo=on_exo, interaction=tau)

    def step(self, action):
        """Apply one control action per env.

        Returns ``(obs, reward, done, info)``; ``done`` is a single bool because
        all episodes share the fixed horizon.
        """
        if self._done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        u = np.clip(np.broadcast_to(np.asarray(action, dtype=float), (self.num_envs,)), -1.0, 1.0)
        try:
            for _ in range(self.config.substeps):
                torques = self.physics_step(u)
        except SimulationError as err:
            self._done = True
            raise SimulationError(
                f"episode aborted at t={self.time:.2f}s (levels {self.levels.tolist()}, "
                f"seeds {self.seeds.tolist()}, action {u.tolist()}): {err}") from err
        self.steps += 1
        tau = torques.interaction
        snap = StepSnapshot(
            pose_error=np.abs(self.human.theta - self.target),
            knee_vel=self.human.omega,
            interaction_torque=tau,
            prev_interaction_torque=self.tau_interaction,
            action=u,
            prev_action=self.prev_action,
            prev_knee_vel=self.prev_knee_vel,
        )
        reward = total_reward(snap, self.plant.reward)
        self.tau_interaction = tau
        self.prev_action = u
        self.prev_knee_vel = np.asarray(self.human.omega, dtype=float)
        obs = self.observe()
        if not np.all(np.isfinite(obs)) or not np.all(np.isfinite(reward)):
            self._done = True
            raise SimulationError(f"non-finite observation or reward at t={self.time:.2f}s "
                                  f"(levels {self.levels.tolist()}, seeds {self.seeds.tolist()})")
        self._done = self.steps >= self.config.episode_steps
        info = {
            "time": self.time,
            "interaction_torque": tau,
            "strap_torque": torques.strap,
            "misalignment_torque": torques.misalignment,
            "spastic_torque": torques.spastic,
            "level": self.levels,
            "subjects": self.subjects.subjects,
        }
        return obs, reward, self._done, info

    def observe(self) -> np.ndarray:
        h, exo, c = self.human, self.exo, self.plant.coupling
        n = self.num_envs
        obs = np.empty((n, OBS_DIM))
        obs[:, OBS_INDEX["knee_angle"]] = h.theta
        obs[:, OBS_INDEX["knee_velocity"]] = h.omega
        obs[:, OBS_INDEX["exo_angle"]] = exo.theta_exo
        obs[:, OBS_INDEX["exo_velocity"]] = exo.omega_exo
        obs[:, OBS_INDEX["slider_pos"]] = np.asarray(exo.slider_pos) / c.slider_range
        obs[:, OBS_INDEX["slider_vel"]] = exo.slider_vel
        obs[:, OBS_INDEX["strap_angle"]] = np.asarray(h.theta) - exo.theta_exo
        obs[:, OBS_INDEX["strap_velocity"]] = np.asarray(h.omega) - exo.omega_exo
        obs[:, _ACT] = h.muscle_activations
        obs[:, _FORCE] = h.muscle_forces / self._muscles.f_max
        obs[:, OBS_INDEX["prev_action"]] = self.prev_action
        obs[:, OBS_INDEX["pose_error"]] = np.asarray(h.theta) - self.target
        obs[:, OBS_INDEX["target_angle"]] = self.target
        obs[:, OBS_INDEX["interaction_torque"]] = np.asarray(self.tau_interaction) / MAX_TORQUE
        return obs

    @property
    def done(self) -> bool:
        return self._done


class KneeExoEnv(VecKneeExoEnv):
    """Single-episode environment: 1-D observations and scalar rewards."""

    def __init__(self, config: EnvConfig = EnvConfig(), plant: Plant = Plant()):
        super().__init__(config, plant, num_envs=1)

    def reset(self, level_override=None, seed=None) -> np.ndarray:
        return super().reset(level_override, seed)[0]

    def step(self, action):
        obs, reward, done, info = super().step(np.reshape(np.asarray(action, dtype=float), (1,)))
        info = dict(info, interaction_torque=float(info["interaction_torque"][0]),
                    level=int(info["level"][0]), subject=info["subjects"][0])
        return obs[0], float(reward[0]), done, info

    @property
    def level(self) -> int:
        return int(self.levels[0])

    @property
    def subject(self) -> SubjectParams:
        return self.subjects.subjects[0]


# ---------------------------------------------------------------------------
# whole episodes


@dataclass
class Trace:
    """Control-rate time series of one episode (sample ``i`` is at ``(i+1) * dt``)."""

    t: np.ndarray
    theta_deg: np.ndarray
    omega: np.ndarray
    action: np.ndarray
    tau_interaction: np.ndarray
    reward: np.ndarray
    level: int
    seed: int
    subject: SubjectParams | None = None
    controller: str = ""

    def __len__(self):
        return len(self.t)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.reward))


Controller = Callable[[np.ndarray], np.ndarray]


def controller_name(controller) -> str:
    return getattr(controller, "name", type(controller).__name__)


def run_episodes(controller: Controller, levels: Sequence[int], seeds: Sequence[int],
                 config: EnvConfig = EnvConfig(), plant: Plant = Plant()) -> list[Trace]:
    """Run one full episode per ``(level, seed)`` pair in lockstep.

    ``controller`` maps a ``(n, OBS_DIM)`` observation batch to ``n`` actions;
    if it has ``reset(n)`` that is called first.
    """
    levels, seeds = list(levels), list(seeds)
    if len(levels) != len(seeds):
        raise ValueError("levels and seeds must have the same length")
    n = len(levels)
    env = VecKneeExoEnv(config, plant, num_envs=n)
    obs = env.reset(level_override=levels, seed=seeds)
    if hasattr(controller, "reset"):
        controller.reset(n)
    steps = config.episode_steps
    theta = np.empty((steps, n))
    omega = np.empty((steps, n))
    action = np.empty((steps, n))
    tau = np.empty((steps, n))
    reward = np.empty((steps, n))
    for i in range(steps):
        u = np.clip(np.broadcast_to(np.asarray(controller(obs), dtype=float), (n,)), -1.0, 1.0)
        obs, r, done, info = env.step(u)
        theta[i] = env.human.theta
        omega[i] = env.human.omega
        action[i] = u
        tau[i] = info["interaction_torque"]
        reward[i] = r
    t = (np.arange(steps) + 1) * config.control_dt
    name = controller_name(controller)
    return [Trace(t=t, theta_deg=np.degrees(theta[:, j]), omega=omega[:, j].copy(), action=action[:, j].copy(),
                  tau_interaction=tau[:, j].copy(), reward=reward[:, j].copy(), level=int(env.levels[j]),
                  seed=int(seeds[j]), subject=env.subjects.subjects[j], controller=name)
            for j in range(n)]


def run_episode(controller: Controller, level: int, seed: int,
                config: EnvConfig = EnvConfig(), plant: Plant = Plant()) -> Trace:
    return run_episodes(controller, [level], [seed], config, plant)[0]


def write_traces_csv(traces: Sequence[Trace], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for tr in traces:
            for i in range(len(tr)):
                w.writerow([repr(float(tr.t[i])), repr(float(tr.theta_deg[i])), repr(float(tr.omega[i])),
                            repr(float(tr.action[i])), repr(float(tr.tau_interaction[i])),
                            repr(float(tr.reward[i])), tr.level, tr.seed])
    return path
