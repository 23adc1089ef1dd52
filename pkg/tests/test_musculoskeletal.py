import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spastic_exo.musculoskeletal import (DEFAULT_MUSCLES, GRAVITY, BodyParams, MsState, MuscleParams,
                                         SimulationError, check_muscles, deg_to_rad, fiber_length_norm,
                                         force_velocity, gravity_torque, hill_force, ms_step, muscle_forces,
                                         pendulum_energy, rad_to_deg, spastic_knee_torque)
from spastic_exo.spasticity import sample_subject, spastic_activations

MUSCLES = check_muscles(DEFAULT_MUSCLES)
m0 = DEFAULT_MUSCLES[7]


def test_fiber_length_examples():
    assert fiber_length_norm(math.radians(m0.ref_angle), m0) == pytest.approx(1.0, abs=1e-15)
    flat = replace(m0, moment_arm=0.0)
    assert np.all(fiber_length_norm(np.linspace(-2, 2, 9), flat) == 1.0)
    m = replace(m0, moment_arm=0.04, optimal_fiber_length=0.10, ref_angle=0.0)
    assert fiber_length_norm(0.5, m) == pytest.approx(0.8, abs=1e-15)


def test_hill_examples():
    assert hill_force(0.0, 1.0, 0.0, m0) == 0.0
    assert hill_force(1.0, 1.0, 0.0, m0) == m0.f_max
    assert hill_force(0.5, 1.0, 0.0, m0) == 0.5 * m0.f_max


def test_force_velocity_shape():
    assert force_velocity(0.0) == 1.0
    assert force_velocity(-1.0) == 0.0
    assert force_velocity(1e9) == pytest.approx(1.4, abs=1e-6)
    v = np.linspace(-1, 5, 1001)
    assert np.all(np.diff(force_velocity(v)) > 0)
    # slopes on both sides of zero agree
    h = 1e-7
    assert (force_velocity(h) - 1) / h == pytest.approx((1 - force_velocity(-h)) / h, rel=1e-5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.2, 2.5), st.floats(-3, 3))
def test_hill_nonnegative_and_monotone_in_activation(a1, a2, l, v):
    lo, hi = sorted((a1, a2))
    f_lo, f_hi = hill_force(lo, l, v, m0), hill_force(hi, l, v, m0)
    assert f_lo >= 0 and f_hi >= f_lo


def test_muscle_param_validation():
    with pytest.raises(ValueError):
        MuscleParams("x", -1.0, 0.04, 0.1, 0.0)
    with pytest.raises(ValueError):
        MuscleParams("x", 100.0, 0.04, 0.1, 0.0, fl_width=1.5)
    bad = list(DEFAULT_MUSCLES)
    bad[0] = replace(bad[0], moment_arm=0.03)
    with pytest.raises(ValueError, match="negative moment arm"):
        check_muscles(bad)


def test_torque_examples():
    assert spastic_knee_torque(np.zeros(11), MUSCLES) == 0.0
    muscles = list(DEFAULT_MUSCLES)
    muscles[8] = replace(muscles[8], moment_arm=0.04)
    forces = np.zeros(11)
    forces[8] = 100.0
    assert spastic_knee_torque(forces, check_muscles(muscles)) == pytest.approx(4.0, abs=1e-12)


def test_torque_matches_resummation():
    p = sample_subject(2, 11)
    q, q_dot = math.radians(40.0), 1.3
    act = spastic_activations(math.degrees(q), q_dot, p)
    forces = muscle_forces(q, q_dot, act, MUSCLES)
    total = 0.0
    for i, m in enumerate(DEFAULT_MUSCLES):
        l = 1.0 - m.moment_arm * (q - math.radians(m.ref_angle)) / m.optimal_fiber_length
        v = -m.moment_arm * q_dot / (m.optimal_fiber_length * m.fv_max_shortening_velocity)
        total += m.moment_arm * float(hill_force(act[i], l, v, m))
    assert spastic_knee_torque(forces, MUSCLES) == pytest.approx(total, rel=0, abs=1e-9)


def test_gravity_examples():
    b = BodyParams()
    assert abs(gravity_torque(math.pi / 2, b)) < 1e-15
    assert gravity_torque(0.0, b) == pytest.approx(-4 * GRAVITY * 0.25, abs=1e-12)
    assert gravity_torque(math.radians(60), b) == pytest.approx(-4.905, abs=1e-12)


def test_equilibrium_at_ninety():
    s = MsState(theta=math.pi / 2, omega=0.0)
    for _ in range(1000):
        nxt = ms_step(s, 0.0, None, 0.001)
        assert abs(nxt.theta - s.theta) < 1e-12 and abs(nxt.omega) < 1e-12
        s = nxt


def test_energy_conserved_without_damping():
    b = BodyParams(viscous_damping=0.0, range_deg=(-90.0, 180.0))
    s = MsState(theta=math.radians(45.0), omega=0.0)
    e0 = pendulum_energy(s, b)
    drift = 0.0
    for _ in range(5000):
        s = ms_step(s, 0.0, None, 0.001, b)
        drift = max(drift, abs(pendulum_energy(s, b) - e0))
    assert drift / abs(e0) < 0.005


def test_damped_settles_at_ninety():
    s = MsState(theta=math.radians(45.0), omega=0.0)
    for _ in range(20000):
        s = ms_step(s, 0.0, None, 0.001)
    assert abs(math.degrees(s.theta) - 90.0) < 0.1


def test_joint_stop_static_balance():
    b = BodyParams()
    s = MsState(theta=math.pi / 2, omega=0.0)
    for _ in range(5000):
        s = ms_step(s, 100.0, None, 0.001, b)
    # the stop spring carries the push plus gravity
    penetration = (math.pi / 2 - s.theta) - math.radians(b.range_deg[1])
    assert b.joint_stop_stiffness * penetration == pytest.approx(100.0 + gravity_torque(s.theta, b), abs=1e-6)


def test_level_zero_muscles_silent():
    p = sample_subject(0, 3)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = MsState(theta=rng.uniform(math.radians(7), math.radians(95)), omega=rng.uniform(-10, 10))
        nxt = ms_step(s, 0.0, p, 0.001, muscles=MUSCLES)
        assert nxt.spastic_torque == 0.0


def test_flexor_reflex_opposes_extension():
    # torques are + in extension; extending means omega < 0 in the flexion convention
    rng = np.random.default_rng(1)
    dominant = 0
    for i in range(1000):
        p = sample_subject(1 + i % 3, rng)
        s = MsState(theta=rng.uniform(math.radians(-5), math.radians(90)), omega=-rng.uniform(0.01, 8))
        nxt = ms_step(s, 0.0, p, 0.001, muscles=MUSCLES)
        act = nxt.muscle_activations
        flexor_torque = np.sum((nxt.muscle_forces * MUSCLES.moment_arm)[:6])
        if act[0] > 0:
            assert flexor_torque < 0
        if act[0] > 0 and act[6] <= 1e-3 * act[0]:
            dominant += 1
            assert nxt.spastic_torque < 0
    assert dominant > 300


def test_deterministic_and_conversion():
    p = sample_subject(3, 5)
    s = MsState(theta=1.0, omega=-2.0)
    a = ms_step(s, 3.0, p, 0.001, muscles=MUSCLES)
    b = ms_step(s, 3.0, p, 0.001, muscles=MUSCLES)
    assert a.theta == b.theta and a.omega == b.omega
    x = np.random.default_rng(0).uniform(-10, 10, 1000)
    assert np.max(np.abs(deg_to_rad(rad_to_deg(x)) - x)) < 1e-12


def test_guards():
    with pytest.raises(ValueError):
        ms_step(MsState(1.0, 0.0), 0.0, None, 0.01)
    with pytest.raises(SimulationError):
        ms_step(MsState(1.0, 0.0), np.nan, None, 0.001)
    with pytest.raises(ValueError):
        BodyParams(shank_mass=0.0)
