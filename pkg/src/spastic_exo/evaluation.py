"""Trial metrics, cohort runs and controller comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .environment import EnvConfig, Plant, Trace, controller_name, run_episodes
from .musculoskeletal import SimulationError

TRIAL_COLUMNS = ("controller", "level", "seed", "settling_s", "rms_nm", "peak_nm", "sse_deg")
METRICS = ("settling_s", "rms_nm", "peak_nm", "sse_deg")
STATS = ("mean", "std", "median", "q1", "q3")
SUMMARY_COLUMNS = ("controller", "level", "n_trials", "n_settled") + tuple(
    f"{m}_{s}" for m in METRICS for s in STATS)
BAND_COLUMNS = ("t", "n", "theta_mean", "theta_std", "action_mean", "action_std", "tau_mean", "tau_std")
STEADY_WINDOW = 0.5  # seconds averaged for the steady-state error


class CohortError(RuntimeError):
    def __init__(self, message, trial_indices=(), partial=()):
        super().__init__(message)
        self.trial_indices = tuple(trial_indices)
        self.partial = list(partial)


class CohortMismatchError(ValueError):
    pass


def _fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# single-trace metrics


def settling_time(times, values, amplitude: float = 83.0, band_frac: float = 0.02):
    """Earliest time after which ``values`` stays within the band around its final value.

    The band half-width is ``band_frac * amplitude``. Returns 0.0 if the trace
    never leaves the band and ``None`` when it only gets there on the last
    sample.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if values.size == 0:
        raise ValueError("empty trace")
    if times.shape != values.shape:
        raise ValueError("times and values must have the same shape")
    band = band_frac * amplitude
    outside = np.flatnonzero(np.abs(values - values[-1]) > band)
    if outside.size == 0:
        return 0.0
    first_in = outside[-1] + 1
    if first_in >= values.size - 1:
        return None
    return float(times[first_in])


def settling_index(times, settling):
    """Index of the first sample at or after ``settling`` (last index if unsettled)."""
    times = np.asarray(times, dtype=float)
    if settling is None:
        return times.size - 1
    return min(int(np.searchsorted(times, settling, side="left")), times.size - 1)


def rms_to_settling(torque, times, settling):
    """RMS of ``torque`` from the start up to the settling sample (whole trace if unsettled)."""
    torque = np.asarray(torque, dtype=float)
    if torque.size == 0:
        raise ValueError("empty torque window")
    window = torque[: settling_index(times, settling) + 1]
    return float(np.sqrt(np.mean(window * window)))


def peak_torque(torque) -> float:
    torque = np.asarray(torque, dtype=float)
    if torque.size == 0:
        raise ValueError("empty torque trace")
    return float(np.max(np.abs(torque)))


def steady_state_error(theta_deg, target_deg: float, samples: int = 50) -> float:
    """Absolute error of the mean over the last ``samples`` samples, degrees."""
    theta_deg = np.asarray(theta_deg, dtype=float)
    if theta_deg.size == 0:
        raise ValueError("empty trace")
    return float(abs(np.mean(theta_deg[-samples:]) - target_deg))


@dataclass(frozen=True)
class TrialMetrics:
    controller: str
    level: int
    seed: int
    settling_time: float | None
    rms_to_settling: float
    peak_torque: float
    steady_state_error: float

    @property
    def settled(self) -> bool:
        return self.settling_time is not None

    def row(self) -> list:
        settle = "nan" if self.settling_time is None else _fmt(self.settling_time)
        return [self.controller, self.level, self.seed, settle, _fmt(self.rms_to_settling),
                _fmt(self.peak_torque), _fmt(self.steady_state_error)]


def trial_metrics(trace: Trace, config: EnvConfig = EnvConfig()) -> TrialMetrics:
    settle = settling_time(trace.t, trace.theta_deg, amplitude=config.amplitude_deg)
    window = max(1, int(round(STEADY_WINDOW / config.control_dt)))
    return TrialMetrics(
        controller=trace.controller,
        level=trace.level,
        seed=trace.seed,
        settling_time=settle,
        rms_to_settling=rms_to_settling(trace.tau_interaction, trace.t, settle),
        peak_torque=peak_torque(trace.tau_interaction),
        steady_state_error=steady_state_error(trace.theta_deg, config.target_angle, window),
    )


# ---------------------------------------------------------------------------
# cohorts


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float
    median: float
    q1: float
    q3: float

    @classmethod
    def of(cls, values: Iterable[float]) -> "MetricStats":
        # sorted first so the result does not depend on trial order
        v = np.sort(np.asarray(list(values), dtype=float))
        if v.size == 0:
            return cls(*(math.nan,) * 5)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return cls(float(np.mean(v)), float(np.std(v)), float(med), float(q1), float(q3))


@dataclass(frozen=True)
class LevelSummary:
    level: int
    n_trials: int
    n_settled: int
    settling_s: MetricStats
    rms_nm: MetricStats
    peak_nm: MetricStats
    sse_deg: MetricStats


@dataclass
class CohortSummary:
    controller: str
    levels: dict[int, LevelSummary]

    @property
    def trial_count(self) -> dict[int, int]:
        return {k: v.n_trials for k, v in self.levels.items()}


def summarize(trials: Sequence[TrialMetrics], controller: str | None = None) -> CohortSummary:
    by_level: dict[int, list[TrialMetrics]] = {}
    for t in trials:
        by_level.setdefault(t.level, []).append(t)
    out = {}
    for level in sorted(by_level):
        ts = by_level[level]
        out[level] = LevelSummary(
            level=level,
            n_trials=len(ts),
            n_settled=sum(t.settled for t in ts),
            settling_s=MetricStats.of(t.settling_time for t in ts if t.settled),
            rms_nm=MetricStats.of(t.rms_to_settling for t in ts),
            peak_nm=MetricStats.of(t.peak_torque for t in ts),
            sse_deg=MetricStats.of(t.steady_state_error for t in ts),
        )
    name = controller if controller is not None else (trials[0].controller if trials else "")
    return CohortSummary(controller=name, levels=out)


@dataclass
class CohortResult:
    trials: list[TrialMetrics]
    summary: CohortSummary
    traces: list[Trace] = field(default_factory=list)


def trial_seeds(levels: Sequence[int], n_trials: int, seed: int) -> list[tuple[int, int]]:
    """Deterministic ``(level, seed)`` pairs, ``n_trials`` per level."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**62, size=(len(levels), n_trials))
    return [(int(level), int(seeds[i, j])) for i, level in enumerate(levels) for j in range(n_trials)]


def run_cohort(controller, levels: Sequence[int] = (0, 1, 2, 3), n_trials: int = 1000, seed: int = 0,
               config: EnvConfig = EnvConfig(), plant: Plant = Plant(), batch_size: int = 250,
               keep_traces: bool = False) -> CohortResult:
    """Evaluate ``controller`` on freshly sampled subjects, ``n_trials`` per level.

    Trials run in lockstep batches of ``batch_size``. A failing batch raises
    :class:`CohortError` carrying the trial indices and the finished trials.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    pairs = trial_seeds(levels, n_trials, seed)
    trials: list[TrialMetrics] = []
    traces: list[Trace] = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start:start + batch_size]
        try:
            batch = run_episodes(controller, [p[0] for p in chunk], [p[1] for p in chunk], config, plant)
        except SimulationError as err:
            idx = range(start, start + len(chunk))
            raise CohortError(f"trials {idx.start}..{idx.stop - 1} failed: {err}", idx, trials) from err
        trials.extend(trial_metrics(tr, config) for tr in batch)
        if keep_traces:
            traces.extend(batch)
    return CohortResult(trials=trials, summary=summarize(trials, controller_name(controller)), traces=traces)


def trace_bands(traces: Sequence[Trace]) -> dict[int, dict[str, np.ndarray]]:
    """Per-level mean and std time series of angle, command and interaction torque."""
    out = {}
    for level in sorted({t.level for t in traces}):
        ts = [t for t in traces if t.level == level]
        theta = np.stack([t.theta_deg for t in ts])
        action = np.stack([t.action for t in ts])
        tau = np.stack([t.tau_interaction for t in ts])
        out[level] = {
            "t": ts[0].t, "n": np.full(ts[0].t.shape, len(ts)),
            "theta_mean": theta.mean(0), "theta_std": theta.std(0),
            "action_mean": action.mean(0), "action_std": action.std(0),
            "tau_mean": tau.mean(0), "tau_std": tau.std(0),
        }
    return out


# ---------------------------------------------------------------------------
# comparison


@dataclass(frozen=True)
class LevelComparison:
    level: int
    rms_baseline: float
    rms_candidate: float
    rms_reduction_pct: float
    peak_baseline: float
    peak_candidate: float
    peak_reduction_pct: float
    peak_delta_nm: float
    settling_baseline: float
    settling_candidate: float
    sse_baseline: float
    sse_candidate: float


@dataclass(frozen=True)
class Comparison:
    candidate: str
    baseline: str
    rows: tuple
    peak_delta_mean: float
    peak_delta_std: float
    peak_reduction_mean_pct: float
    rms_reduction_mean_pct: float


def reduction_pct(baseline: float, candidate: float) -> float:
    if baseline == 0:
        return 0.0 if candidate == 0 else -math.inf
    return 100.0 * (baseline - candidate) / baseline


def compare(candidate: CohortSummary, baseline: CohortSummary) -> Comparison:
    """Per-level reductions of ``candidate`` relative to ``baseline`` (positive = lower torque)."""
    if sorted(candidate.levels) != sorted(baseline.levels):
        raise CohortMismatchError(f"levels differ: {sorted(candidate.levels)} vs {sorted(baseline.levels)}")
    if candidate.trial_count != baseline.trial_count:
        raise CohortMismatchError(f"trial counts differ: {candidate.trial_count} vs {baseline.trial_count}")
    rows = []
    for level in sorted(candidate.levels):
        c, b = candidate.levels[level], baseline.levels[level]
        rows.append(LevelComparison(
            level=level,
            rms_baseline=b.rms_nm.mean, rms_candidate=c.rms_nm.mean,
            rms_reduction_pct=reduction_pct(b.rms_nm.mean, c.rms_nm.mean),
            peak_baseline=b.peak_nm.mean, peak_candidate=c.peak_nm.mean,
            peak_reduction_pct=reduction_pct(b.peak_nm.mean, c.peak_nm.mean),
            peak_delta_nm=b.peak_nm.mean - c.peak_nm.mean,
            settling_baseline=b.settling_s.mean, settling_candidate=c.settling_s.mean,
            sse_baseline=b.sse_deg.mean, sse_candidate=c.sse_deg.mean,
        ))
    deltas = np.array([r.peak_delta_nm for r in rows])
    return Comparison(
        candidate=candidate.controller, baseline=baseline.controller, rows=tuple(rows),
        peak_delta_mean=float(np.mean(deltas)), peak_delta_std=float(np.std(deltas)),
        peak_reduction_mean_pct=float(np.mean([r.peak_reduction_pct for r in rows])),
        rms_reduction_mean_pct=float(np.mean([r.rms_reduction_pct for r in rows])),
    )


COMPARISON_COLUMNS = ("level", "rms_baseline", "rms_candidate", "rms_reduction_pct", "peak_baseline",
                      "peak_candidate", "peak_reduction_pct", "peak_delta_nm", "settling_baseline",
                      "settling_candidate", "sse_baseline", "sse_candidate")


def format_comparison(cmp: Comparison) -> str:
    header = ["level", "RMS base", "RMS cand", "RMS red %", "peak base", "peak cand", "peak red %",
              "peak delta", "settle base", "settle cand"]
    lines = [[str(r.level)] + [f"{x:.2f}" for x in (
        r.rms_baseline, r.rms_candidate, r.rms_reduction_pct, r.peak_baseline, r.peak_candidate,
        r.peak_reduction_pct, r.peak_delta_nm, r.settling_baseline, r.settling_candidate)] for r in cmp.rows]
    widths = [max(len(h), *(len(l[i]) for l in lines)) for i, h in enumerate(header)]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    out = [f"candidate: {cmp.candidate}   baseline: {cmp.baseline}", fmt(header), fmt(["-" * w for w in widths])]
    out += [fmt(l) for l in lines]
    out.append(f"mean peak torque reduction: {cmp.peak_delta_mean:.1f} +- {cmp.peak_delta_std:.1f} N m "
               f"({cmp.peak_reduction_mean_pct:.1f} %)")
    out.append(f"mean RMS-to-settling reduction: {cmp.rms_reduction_mean_pct:.1f} %")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# CSV io


def write_trials_csv(trials: Sequence[TrialMetrics], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRIAL_COLUMNS)
        for t in trials:
            w.writerow(t.row())
    return path


def read_trials_csv(path) -> list[TrialMetrics]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRIAL_COLUMNS:
            raise ValueError(f"{path}: expected columns {TRIAL_COLUMNS}, got {reader.fieldnames}")
        out = []
        for row in reader:
            settle = float(row["settling_s"])
            out.append(TrialMetrics(
                controller=row["controller"], level=int(row["level"]), seed=int(row["seed"]),
                settling_time=None if math.isnan(settle) else settle,
                rms_to_settling=float(row["rms_nm"]), peak_torque=float(row["peak_nm"]),
                steady_state_error=float(row["sse_deg"])))
    return out


def write_summary_csv(summary: CohortSummary, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for level, s in sorted(summary.levels.items()):
            row = [summary.controller, level, s.n_trials, s.n_settled]
            for m in METRICS:
                stats = getattr(s, m)
                row += [_fmt(getattr(stats, k)) for k in STATS]
            w.writerow(row)
    return path


def read_summary_csv(path) -> CohortSummary:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ValueError(f"{path}: expected columns {SUMMARY_COLUMNS}, got {reader.fieldnames}")
        levels, controller = {}, ""
        for row in reader:
            controller = row["controller"]
            stats = {m: MetricStats(*(float(row[f"{m}_{k}"]) for k in STATS)) for m in METRICS}
            level = int(row["level"])
            levels[level] = LevelSummary(level=level, n_trials=int(row["n_trials"]),
                                         n_settled=int(row["n_settled"]), **stats)
    return CohortSummary(controller=controller, levels=levels)


def write_comparison_csv(cmp: Comparison, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_COLUMNS)
        for r in cmp.rows:
            w.writerow([r.level] + [_fmt(getattr(r, c)) for c in COMPARISON_COLUMNS[1:]])
        w.writerow(["overall_peak_delta_mean", _fmt(cmp.peak_delta_mean)] + [""] * (len(COMPARISON_COLUMNS) - 2))
        w.writerow(["overall_peak_delta_std", _fmt(cmp.peak_delta_std)] + [""] * (len(COMPARISON_COLUMNS) - 2))
    return path


def write_band_csv(band: dict[str, np.ndarray], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BAND_COLUMNS)
        for i in range(len(band["t"])):
            w.writerow([_fmt(band[c][i]) if c != "n" else int(band[c][i]) for c in BAND_COLUMNS])
    return path


def write_boxplot_csv(trials: Sequence[TrialMetrics], path) -> Path:
    """Five-number summary of peak torque per (controller, level)."""
    path = Path(path)
    groups: dict[tuple, list[float]] = {}
    for t in trials:
        groups.setdefault((t.controller, t.level), []).append(t.peak_torque)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("controller", "level", "n", "min", "q1", "median", "q3", "max", "mean"))
        for (name, level), vals in sorted(groups.items()):
            v = np.sort(np.asarray(vals))
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            w.writerow([name, level, v.size] + [_fmt(x) for x in (v[0], q1, med, q3, v[-1], np.mean(v))])
    return path
