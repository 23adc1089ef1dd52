import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spastic_exo.environment import EnvConfig, Trace
from spastic_exo.evaluation import (CohortMismatchError, TrialMetrics, compare, format_comparison, peak_torque,
                                    read_summary_csv, read_trials_csv, reduction_pct, rms_to_settling,
                                    run_cohort, settling_time, steady_state_error, summarize, trace_bands,
                                    trial_metrics, trial_seeds, write_band_csv, write_boxplot_csv,
                                    write_comparison_csv, write_summary_csv, write_trials_csv)
from spastic_exo.pid import PidController

T = (np.arange(800) + 1) * 0.01


def test_settling_of_first_order_response():
    tau = 0.5
    theta = 7.0 + 83.0 * np.exp(-T / tau)
    # band 2 % of 83 deg around the final value; continuous answer tau * ln 50
    expect = tau * math.log(50.0)
    assert expect == pytest.approx(1.956, abs=1e-3)
    assert settling_time(T, theta) == pytest.approx(expect, abs=0.01)


def test_settling_edge_cases():
    assert settling_time(T, np.full(800, 7.0)) == 0.0
    late = np.full(800, 90.0)
    late[-1] = 7.0
    assert settling_time(T, late) is None
    step = np.where(T < 3.0, 90.0, 7.0)
    assert settling_time(T, step) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        settling_time([], [])


def test_rms_and_peak_examples():
    t = np.arange(1000) * 0.001
    sine = 40.0 * np.sin(2 * math.pi * 5 * t)
    assert rms_to_settling(sine, t, None) == pytest.approx(40.0 / math.sqrt(2), rel=1e-12)
    assert rms_to_settling(np.full(10, -3.0), np.arange(10.0), 4.0) == 3.0
    assert rms_to_settling(np.arange(10.0), np.arange(10.0), 0.0) == 0.0
    assert peak_torque([1.0, -7.5, 3.0]) == 7.5
    assert peak_torque(np.zeros(5)) == 0.0
    with pytest.raises(ValueError):
        peak_torque([])


@given(st.floats(-100, 100))
def test_rms_of_constant(c):
    assert rms_to_settling(np.full(50, c), np.arange(50.0), None) == pytest.approx(abs(c), rel=1e-12)


def test_steady_state_error():
    theta = np.concatenate([np.full(750, 50.0), np.full(50, 9.0)])
    assert steady_state_error(theta, 7.0) == pytest.approx(2.0)


def _trial(level, seed, peak, settle=1.0, name="x"):
    return TrialMetrics(name, level, seed, settle, peak / 2, peak, 0.1 * peak)


def _random_trials(rng, n=40, name="x"):
    return [_trial(int(rng.integers(4)), i, float(rng.uniform(1, 100)),
                   None if rng.random() < 0.1 else float(rng.uniform(0.5, 8)), name) for i in range(n)]


def test_csv_roundtrip_bit_exact(tmp_path):
    trials = _random_trials(np.random.default_rng(0))
    back = read_trials_csv(write_trials_csv(trials, tmp_path / "trials.csv"))
    assert back == trials
    summary = summarize(trials)
    again = read_summary_csv(write_summary_csv(summary, tmp_path / "summary.csv"))
    assert again.controller == summary.controller and again.trial_count == summary.trial_count
    for level in summary.levels:
        a, b = summary.levels[level], again.levels[level]
        for m in ("settling_s", "rms_nm", "peak_nm", "sse_deg"):
            assert getattr(a, m) == getattr(b, m)


def test_summary_permutation_invariant():
    trials = _random_trials(np.random.default_rng(1), 200)
    shuffled = list(trials)
    random.Random(0).shuffle(shuffled)
    assert summarize(trials) == summarize(shuffled)


def test_unsettled_trials_excluded_from_settling_stats():
    trials = [_trial(1, 0, 10.0, None), _trial(1, 1, 10.0, 2.0), _trial(1, 2, 10.0, 4.0)]
    s = summarize(trials).levels[1]
    assert s.n_trials == 3 and s.n_settled == 2 and s.settling_s.mean == 3.0


def test_compare_identity_and_known_reduction(tmp_path):
    base = summarize([_trial(lvl, i, 50.0, name="pid") for lvl in range(4) for i in range(5)])
    same = compare(base, base)
    assert all(r.rms_reduction_pct == 0.0 and r.peak_delta_nm == 0.0 for r in same.rows)
    cand = summarize([_trial(lvl, i, 45.0, name="sac") for lvl in range(4) for i in range(5)])
    cmp = compare(cand, base)
    for r in cmp.rows:
        assert r.peak_reduction_pct == pytest.approx(10.0)
        assert r.rms_reduction_pct == pytest.approx(10.0)
        assert r.peak_delta_nm == pytest.approx(5.0)
    assert cmp.peak_delta_std == pytest.approx(0.0)
    assert "sac" in format_comparison(cmp)
    write_comparison_csv(cmp, tmp_path / "cmp.csv")
    assert reduction_pct(0.0, 0.0) == 0.0


def test_compare_mismatch():
    a = summarize([_trial(0, 0, 1.0), _trial(1, 0, 1.0)])
    b = summarize([_trial(0, 0, 1.0)])
    c = summarize([_trial(0, 0, 1.0), _trial(0, 1, 1.0), _trial(1, 0, 1.0)])
    with pytest.raises(CohortMismatchError):
        compare(a, b)
    with pytest.raises(CohortMismatchError):
        compare(a, c)


def test_trial_seeds_deterministic_and_distinct():
    a = trial_seeds([0, 1, 2, 3], 50, 0)
    assert a == trial_seeds([0, 1, 2, 3], 50, 0)
    assert a != trial_seeds([0, 1, 2, 3], 50, 1)
    assert len({s for _, s in a}) == 200


def test_small_pid_cohort(tmp_path):
    res = run_cohort(PidController(), levels=(0, 3), n_trials=3, seed=5, batch_size=4, keep_traces=True)
    assert len(res.trials) == 6 and res.summary.trial_count == {0: 3, 3: 3}
    assert all(t.controller == "pid" for t in res.trials)
    m = trial_metrics(res.traces[0], EnvConfig())
    assert m == res.trials[0]
    again = run_cohort(PidController(), levels=(0, 3), n_trials=3, seed=5, batch_size=6)
    assert again.trials == res.trials
    bands = trace_bands(res.traces)
    assert set(bands) == {0, 3} and np.all(bands[0]["n"] == 3)
    write_band_csv(bands[3], tmp_path / "band.csv")
    write_boxplot_csv(res.trials, tmp_path / "box.csv")
    with pytest.raises(ValueError):
        run_cohort(PidController(), n_trials=0)
