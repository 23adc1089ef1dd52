import csv
import math

import numpy as np
import pytest

from spastic_exo.environment import (OBS_DIM, OBS_INDEX, OBS_LAYOUT, TRACE_COLUMNS, EnvConfig, KneeExoEnv, Plant,
                                     VecKneeExoEnv, run_episode, run_episodes, write_traces_csv)
from spastic_exo.pid import PidController


def test_reset_observation():
    env = KneeExoEnv()
    obs = env.reset(level_override=0, seed=1)
    assert obs.shape == (OBS_DIM,) == (len(OBS_LAYOUT),)
    assert obs[OBS_INDEX["knee_angle"]] == pytest.approx(math.pi / 2, abs=1e-15)
    assert obs[OBS_INDEX["knee_velocity"]] == 0.0
    assert obs[OBS_INDEX["pose_error"]] == pytest.approx(1.4486, abs=1e-4)
    assert obs[OBS_INDEX["target_angle"]] == pytest.approx(math.radians(7.0))
    assert env.time == 0.0 and not env.done


def test_level_frequencies():
    env = VecKneeExoEnv(EnvConfig(seed=0), Plant(), num_envs=4000)
    env.reset()
    freq = np.bincount(env.levels, minlength=4) / 4000
    assert np.all((freq >= 0.225) & (freq <= 0.275))


def test_full_episode_length_and_step_after_done():
    env = KneeExoEnv()
    env.reset(level_override=1, seed=2)
    n = 0
    done = False
    while not done:
        _, r, done, info = env.step(0.2)
        n += 1
        assert np.isfinite(r)
    assert n == 800 and info["time"] == pytest.approx(8.0)
    with pytest.raises(RuntimeError):
        env.step(0.0)


def test_zero_action_stays_near_rest():
    tr = run_episode(lambda obs: np.zeros(len(obs)), 0, 0)
    assert np.max(np.abs(tr.theta_deg - 90.0)) < 1.0


def test_full_command_extends_monotonically():
    tr = run_episode(lambda obs: np.ones(len(obs)), 0, 0)
    first = np.argmax(tr.theta_deg < 30.0)
    assert np.all(np.diff(tr.theta_deg[:first]) < 0)
    assert tr.theta_deg[-1] < 7.0


def test_actions_clipped():
    a = run_episode(lambda obs: np.full(len(obs), 5.0), 2, 4)
    b = run_episode(lambda obs: np.ones(len(obs)), 2, 4)
    assert np.array_equal(a.theta_deg, b.theta_deg) and np.all(a.action == 1.0)


def test_random_episodes_stay_finite():
    rng = np.random.default_rng(0)
    for batch in range(4):
        env = VecKneeExoEnv(EnvConfig(seed=batch), Plant(), num_envs=250)
        obs = env.reset()
        done = False
        while not done:
            obs, r, done, _ = env.step(rng.uniform(-1, 1, 250))
            assert np.all(np.isfinite(obs)) and np.all(np.isfinite(r))


def test_determinism_and_batch_independence():
    pid = PidController()
    single = run_episode(pid, 3, 11)
    again = run_episode(PidController(), 3, 11)
    batched = run_episodes(PidController(), [1, 3, 0], [5, 11, 6])
    assert np.array_equal(single.theta_deg, again.theta_deg)
    assert np.array_equal(single.theta_deg, batched[1].theta_deg)
    assert single.subject == batched[1].subject


def test_reward_upper_bound_along_episodes():
    for tr in run_episodes(PidController(), [0, 1, 2, 3], [0, 1, 2, 3]):
        assert np.all(tr.reward <= 1.01)


def test_trace_csv(tmp_path):
    traces = run_episodes(PidController(), [0, 2], [1, 2])
    path = write_traces_csv(traces, tmp_path / "trace.csv")
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert len(rows) == 1 + 2 * 800
    assert float(rows[1][1]) == traces[0].theta_deg[0]


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(control_dt=0.0105)
    with pytest.raises(ValueError):
        EnvConfig(levels=(4,))
    with pytest.raises(ValueError):
        VecKneeExoEnv(EnvConfig(target_angle=110.0))
    with pytest.raises(ValueError):
        VecKneeExoEnv(EnvConfig(), Plant(), 2).reset(seed=[1, 2, 3])
