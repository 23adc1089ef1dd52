"""Differentiable spasticity reflex model.

A subject's reflex is described by an angular and a velocity coefficient, each
a difference of two sigmoids around a pair of thresholds. The summed
coefficient is read as the fraction of maximum isometric force that the
stretched knee muscles produce.

Conventions used throughout the package:

* ``angle_deg`` is the knee angle in degrees measured from the 90 deg flexion
  start posture, positive toward extension (so the reference movement goes
  from 0 to 83 deg). :func:`extension_deg` converts from the flexion angle.
* ``velocity`` is the extension rate of that angle, rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Union

import numpy as np
import yaml

FLEXORS = ("GastrocLat", "GastrocMed", "Semimem", "Semiten", "BicFemLong", "BicFemShort")
EXTENSORS = ("Gracilis", "VastusMed", "VastusLat", "VastusInt", "RectusFem")

LEVEL_SLOPES = (0.0, 0.5, 0.2, 0.1)
MAX_RESAMPLES = 100
_EXP_CLAMP = 500.0


@dataclass(frozen=True)
class SpasticityLevel:
    level_id: int

    def __post_init__(self):
        if isinstance(self.level_id, bool) or int(self.level_id) != self.level_id:
            raise ValueError(f"level id must be an integer, got {self.level_id!r}")
        if self.level_id == 4:
            raise ValueError("spasticity level 4 is not implemented")
        if self.level_id not in (0, 1, 2, 3):
            raise ValueError(f"spasticity level must be in 0..3, got {self.level_id}")
        object.__setattr__(self, "level_id", int(self.level_id))


LevelLike = Union[int, SpasticityLevel]


def as_level(level: LevelLike) -> SpasticityLevel:
    return level if isinstance(level, SpasticityLevel) else SpasticityLevel(level)


@dataclass(frozen=True)
class SubjectParams:
    """Reflex thresholds and coefficients of one (possibly sampled) subject.

    Angles are degrees, velocities rad/s, ``k_ang`` is per degree and
    ``k_vel`` per degree/s.
    """

    level: SpasticityLevel
    theta_flex: float
    theta_ext: float
    v_lower: float
    v_upper: float
    s_theta_max: float
    s_v_max: float
    k_ang: float
    k_vel: float

    def __post_init__(self):
        object.__setattr__(self, "level", as_level(self.level))
        problems = subject_violations(self)
        if problems:
            raise ValueError("invalid subject parameters: " + "; ".join(problems))

    def as_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["level"] = self.level.level_id
        return out


NUMERIC_FIELDS = ("theta_flex", "theta_ext", "v_lower", "v_upper",
                  "s_theta_max", "s_v_max", "k_ang", "k_vel")


def subject_violations(p) -> list[str]:
    out = []
    if not all(math.isfinite(getattr(p, name)) for name in NUMERIC_FIELDS):
        out.append("non-finite field")
        return out
    if not p.theta_flex < p.theta_ext:
        out.append("theta_flex must be < theta_ext")
    if not p.v_lower < p.v_upper:
        out.append("v_lower must be < v_upper")
    for name in ("s_theta_max", "s_v_max"):
        if not 0.0 <= getattr(p, name) <= 1.0:
            out.append(f"{name} must lie in [0, 1]")
    for name in ("k_ang", "k_vel"):
        if getattr(p, name) < 0.0:
            out.append(f"{name} must be >= 0")
    return out


@dataclass(frozen=True)
class MuscleGroupMap:
    flexors: tuple = FLEXORS
    extensors: tuple = EXTENSORS

    def __post_init__(self):
        object.__setattr__(self, "flexors", tuple(self.flexors))
        object.__setattr__(self, "extensors", tuple(self.extensors))
        ids = self.flexors + self.extensors
        if len(ids) != 11 or len(set(ids)) != 11:
            raise ValueError("muscle groups need 11 unique identifiers in two disjoint groups")

    @property
    def muscles(self) -> tuple:
        """Ordering of the activation vector: flexors first, then extensors."""
        return self.flexors + self.extensors


DEFAULT_GROUPS = MuscleGroupMap()


class SubjectBatch:
    """Several subjects stacked field-wise so the coefficient functions broadcast."""

    def __init__(self, subjects):
        self.subjects = tuple(subjects)
        self.level = np.array([p.level.level_id for p in self.subjects])
        for name in NUMERIC_FIELDS:
            setattr(self, name, np.array([getattr(p, name) for p in self.subjects], dtype=float))

    def __len__(self):
        return len(self.subjects)


# ---------------------------------------------------------------------------
# level table


def _parse_level_table(raw: Mapping) -> dict[int, SubjectParams]:
    if not isinstance(raw, Mapping):
        raise ValueError("level table must be a mapping of level id -> parameters")
    table = {}
    for key, entry in raw.items():
        level = SpasticityLevel(int(key))
        if not isinstance(entry, Mapping):
            raise ValueError(f"level {key}: expected a mapping")
        unknown = set(entry) - set(NUMERIC_FIELDS)
        missing = set(NUMERIC_FIELDS) - set(entry)
        if unknown or missing:
            raise ValueError(f"level {key}: unknown keys {sorted(unknown)}, missing {sorted(missing)}")
        table[level.level_id] = SubjectParams(level=level, **{k: float(entry[k]) for k in NUMERIC_FIELDS})
    if table.get(0) is not None:
        p0 = table[0]
        if p0.s_theta_max != 0.0 or p0.s_v_max != 0.0:
            raise ValueError("level 0 must have zero activation coefficients")
    return table


def load_level_table(path: str | Path | None = None) -> dict[int, SubjectParams]:
    """Load and validate a level table (the bundled canonical table by default)."""
    if path is None:
        return dict(_bundled_table())
    with open(path) as fh:
        return _parse_level_table(yaml.safe_load(fh))


@lru_cache(maxsize=1)
def _bundled_table() -> dict[int, SubjectParams]:
    text = resources.files("spastic_exo").joinpath("data/levels.yaml").read_text()
    return _parse_level_table(yaml.safe_load(text))


def canonical_params(level: LevelLike, table: Mapping[int, SubjectParams] | None = None) -> SubjectParams:
    level = as_level(level)
    table = _bundled_table() if table is None else table
    return table[level.level_id]


# ---------------------------------------------------------------------------
# coefficients


def extension_deg(theta_flexion):
    """Knee flexion angle (rad) -> table angle convention (deg toward extension)."""
    return 90.0 - np.degrees(theta_flexion)


def sigmoid_phi(k, beta, beta0):
    """Increasing logistic ``1 / (1 + exp(-k (beta - beta0)))``."""
    x = np.clip(-np.multiply(k, np.subtract(beta, beta0)), -_EXP_CLAMP, _EXP_CLAMP)
    return 1.0 / (1.0 + np.exp(x))


def _sigmoid_slope(k, beta, beta0):
    # d phi / d beta = k phi(x) phi(-x), both factors accurate in the tails
    return k * sigmoid_phi(k, beta, beta0) * sigmoid_phi(k, beta0, beta)


def angular_parts(angle_deg, p: SubjectParams):
    """(over-flexion part, over-extension part) of the angular coefficient."""
    below = p.s_theta_max * sigmoid_phi(p.k_ang, p.theta_flex, angle_deg)
    above = p.s_theta_max * sigmoid_phi(p.k_ang, angle_deg, p.theta_ext)
    return below, above


def velocity_parts(velocity, p: SubjectParams):
    """(fast-flexion part, fast-extension part) of the velocity coefficient."""
    v = np.degrees(velocity)
    lo, hi = np.degrees(p.v_lower), np.degrees(p.v_upper)
    below = p.s_v_max * sigmoid_phi(p.k_vel, lo, v)
    above = p.s_v_max * sigmoid_phi(p.k_vel, v, hi)
    return below, above


def sc_angular(angle_deg, p: SubjectParams):
    below, above = angular_parts(angle_deg, p)
    return below + above


def sc_velocity(velocity, p: SubjectParams):
    below, above = velocity_parts(velocity, p)
    return below + above


def sc_total(angle_deg, velocity, p: SubjectParams):
    return np.clip(sc_angular(angle_deg, p) + sc_velocity(velocity, p), 0.0, 1.0)


def sc_total_gradient(angle_deg, velocity, p: SubjectParams):
    """Analytic partials of the unclamped coefficient.

    Returns ``(d/d angle_deg, d/d velocity)`` with velocity in rad/s.
    """
    d_angle = p.s_theta_max * (_sigmoid_slope(p.k_ang, angle_deg, p.theta_ext)
                               - _sigmoid_slope(p.k_ang, angle_deg, p.theta_flex))
    v = np.degrees(velocity)
    lo, hi = np.degrees(p.v_lower), np.degrees(p.v_upper)
    d_vdeg = p.s_v_max * (_sigmoid_slope(p.k_vel, v, hi) - _sigmoid_slope(p.k_vel, v, lo))
    return d_angle, d_vdeg * (180.0 / math.pi)


def spastic_activations(angle_deg, velocity, p: SubjectParams,
                        groups: MuscleGroupMap = DEFAULT_GROUPS) -> np.ndarray:
    """Per-muscle reflex activation, ordered as ``groups.muscles``.

    Over-extension and fast extension stretch the flexors; over-flexion and
    fast flexion stretch the extensors. Each group receives the sigmoid tails
    that stretch it, so the two shares sum to ``sc_total`` (before clamping)
    and the assignment stays smooth through zero velocity.

    Broadcasts over leading dimensions; the muscle axis is last.
    """
    ang_below, ang_above = angular_parts(angle_deg, p)
    vel_below, vel_above = velocity_parts(velocity, p)
    flex = np.clip(ang_above + vel_above, 0.0, 1.0)
    ext = np.clip(ang_below + vel_below, 0.0, 1.0)
    nf, ne = len(groups.flexors), len(groups.extensors)
    flex = np.asarray(flex, dtype=float)[..., None]
    ext = np.asarray(ext, dtype=float)[..., None]
    shape = np.broadcast_shapes(flex.shape, ext.shape)
    return np.concatenate([np.broadcast_to(flex, shape[:-1] + (nf,)),
                           np.broadcast_to(ext, shape[:-1] + (ne,))], axis=-1)


# ---------------------------------------------------------------------------
# subject randomisation


def sample_subject(level: LevelLike, rng_seed=None, noise_frac: float = 0.10,
                   table: Mapping[int, SubjectParams] | None = None) -> SubjectParams:
    """Draw an individual around the canonical level parameters.

    Every numeric field gets Gaussian noise with std ``noise_frac * |value|``.
    A field that breaks an invariant is redrawn (up to 100 times) rather than
    clipped.

    Args:
        level: spasticity level 0..3.
        rng_seed: seed or ``numpy.random.Generator``.
        noise_frac: relative standard deviation.
    """
    if noise_frac < 0:
        raise ValueError("noise_frac must be >= 0")
    base = canonical_params(level, table)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    def draw(name, ok=lambda x: True):
        mean = getattr(base, name)
        sd = noise_frac * abs(mean)
        for _ in range(MAX_RESAMPLES):
            x = float(mean + sd * rng.standard_normal())
            if ok(x):
                return x
        raise ValueError(f"could not sample {name} within its invariants "
                         f"after {MAX_RESAMPLES} draws (noise_frac={noise_frac})")

    theta_flex = draw("theta_flex")
    theta_ext = draw("theta_ext", lambda x: x > theta_flex)
    v_lower = draw("v_lower")
    v_upper = draw("v_upper", lambda x: x > v_lower)
    unit = lambda x: 0.0 <= x <= 1.0
    s_theta = draw("s_theta_max", unit)
    s_v = draw("s_v_max", unit)
    k_ang = draw("k_ang", lambda x: x >= 0.0)
    k_vel = draw("k_vel", lambda x: x >= 0.0)
    return replace(base, theta_flex=theta_flex, theta_ext=theta_ext, v_lower=v_lower,
                   v_upper=v_upper, s_theta_max=s_theta, s_v_max=s_v, k_ang=k_ang, k_vel=k_vel)
