"""Command-line entry point: train, eval, compare, sweep.

Every command writes into a fresh timestamped directory under the output
root (``--out``, else ``output_dir`` from the config, else
``$SPASTIC_EXO_OUT``, else ``./runs``) and prints that directory.

Exit codes: 0 success, 2 configuration error, 3 artifact error,
130 interrupted.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click

from . import __version__
from .config import CONFIG_SCHEMA_VERSION, ConfigError, RunConfig, build_config, write_resolved
from .environment import OBS_LAYOUT_VERSION, TRACE_SCHEMA_VERSION
from .evaluation import (CohortError, CohortMismatchError, compare, format_comparison, read_summary_csv,
                         read_trials_csv, run_cohort, trace_bands, write_band_csv, write_boxplot_csv,
                         write_comparison_csv, write_summary_csv, write_trials_csv)
from .pid import PidController
from .sac.checkpoint import FORMAT_VERSION, CheckpointError, load_actor
from .sac.policy import DeterministicPolicy
from .sac.train import TrainingInterrupted, directory_sink, train, write_curve_csv

OUT_ENV = "SPASTIC_EXO_OUT"
EXIT_CONFIG, EXIT_ARTIFACT, EXIT_INTERRUPTED = 2, 3, 130
ARTIFACT_SCHEMA_VERSION = 1

log = logging.getLogger("spastic_exo")


class ArtifactError(RuntimeError):
    pass


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as err:
            click.echo(f"config error: {err}", err=True)
            sys.exit(EXIT_CONFIG)
        except (ArtifactError, CheckpointError, CohortMismatchError, CohortError) as err:
            click.echo(f"artifact error: {err}", err=True)
            sys.exit(EXIT_ARTIFACT)
        except KeyboardInterrupt:
            click.echo("interrupted", err=True)
            sys.exit(EXIT_INTERRUPTED)
    return wrapper


def _parse_levels(ctx, param, value):
    if not value:
        return None
    out = []
    for chunk in value:
        for part in str(chunk).split(","):
            part = part.strip()
            if part:
                try:
                    out.append(int(part))
                except ValueError:
                    raise click.BadParameter(f"not a level id: {part!r}") from None
    return out


def _output_root(cfg: RunConfig) -> Path:
    if cfg.output_dir:
        return Path(cfg.output_dir)
    return Path(os.environ.get(OUT_ENV) or "runs")


def _run_dir(cfg: RunConfig, command: str) -> Path:
    root = _output_root(cfg)
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    for k in range(1000):
        path = root / (f"{stamp}-{command}" + (f"-{k}" if k else ""))
        try:
            path.mkdir(parents=True, exist_ok=False)
            return path
        except FileExistsError:
            continue
        except OSError as err:
            raise ArtifactError(f"cannot create run directory {path}: {err.strerror}") from err
    raise ArtifactError(f"could not find a free run directory under {root}")


def _manifest(run_dir: Path, command: str, cfg: RunConfig | None, artifacts, **extra) -> Path:
    data = {
        "command": command,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "schemas": {
            "artifacts": ARTIFACT_SCHEMA_VERSION,
            "config": CONFIG_SCHEMA_VERSION,
            "observation_layout": OBS_LAYOUT_VERSION,
            "trace": TRACE_SCHEMA_VERSION,
            "checkpoint_format": FORMAT_VERSION,
        },
        "seed": cfg.seed if cfg is not None else None,
        "artifacts": sorted(Path(a).name for a in artifacts),
        **extra,
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


def _config(config, overrides) -> RunConfig:
    return build_config(config, overrides)


def _controller(cfg: RunConfig, pid: bool, checkpoint):
    if pid == (checkpoint is not None):
        raise click.UsageError("give exactly one of --pid or --checkpoint")
    if pid:
        return PidController(cfg.pid, dt=cfg.env.control_dt)
    return DeterministicPolicy(load_actor(checkpoint))


config_opt = click.option("--config", type=click.Path(dir_okay=False), default=None, help="YAML run config.")
seed_opt = click.option("--seed", type=int, default=None, help="Master seed.")
out_opt = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output root directory.")
levels_opt = click.option("--levels", "--level", "levels", multiple=True, callback=_parse_levels,
                          help="Spasticity levels, comma separated or repeated.")
trials_opt = click.option("--trials", type=int, default=None, help="Trials per level.")
pid_opt = click.option("--pid", is_flag=True, help="Use the PID baseline.")
ckpt_opt = click.option("--checkpoint", type=click.Path(dir_okay=False), default=None, help="Policy checkpoint.")


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Spastic knee / exoskeleton digital twin."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


@cli.command("train")
@config_opt
@seed_opt
@click.option("--steps", type=int, default=None, help="Total environment steps.")
@levels_opt
@out_opt
@_exit_codes
def cmd_train(config, seed, steps, levels, out):
    """Train a policy; writes best/final checkpoints and the learning curve."""
    cfg = _config(config, {"seed": seed, "sac.total_steps": steps, "env.levels": levels, "output_dir": out})
    run_dir = _run_dir(cfg, "train")
    write_resolved(cfg, run_dir / "config.yaml")
    click.echo(str(run_dir))

    def progress(row):
        click.echo(f"step {row.step}: eval return {row.eval_return_mean:.2f} +- {row.eval_return_std:.2f}, "
                   f"alpha {row.alpha:.4f}", err=True)

    curve_path = run_dir / "learning_curve.csv"
    try:
        result = train(cfg.sac, cfg.env, cfg.plant(), seed=cfg.seed, sink=directory_sink(run_dir),
                       progress=progress)
    except TrainingInterrupted as stop:
        write_curve_csv(stop.result.curve, curve_path)
        _manifest(run_dir, "train", cfg, run_dir.iterdir(), interrupted=True,
                  steps_done=stop.result.steps_done)
        raise
    write_curve_csv(result.curve, curve_path)
    _manifest(run_dir, "train", cfg, list(run_dir.iterdir()) + [run_dir / "manifest.json"],
              steps_done=result.steps_done, best_eval_return=result.best_return if result.curve else None,
              sim_failures=result.sim_failures)


@cli.command("eval")
@config_opt
@seed_opt
@levels_opt
@trials_opt
@pid_opt
@ckpt_opt
@out_opt
@_exit_codes
def cmd_eval(config, seed, levels, trials, pid, checkpoint, out):
    """Run a cohort and write per-trial and summary metrics."""
    cfg = _config(config, {"seed": seed, "cohort.levels": levels, "cohort.trials": trials, "output_dir": out})
    controller = _controller(cfg, pid, checkpoint)
    run_dir = _run_dir(cfg, "eval")
    write_resolved(cfg, run_dir / "config.yaml")
    click.echo(str(run_dir))
    res = run_cohort(controller, cfg.cohort.levels, cfg.cohort.trials, cfg.seed, cfg.env, cfg.plant(),
                     batch_size=cfg.cohort.batch_size)
    paths = [write_trials_csv(res.trials, run_dir / "trials.csv"),
             write_summary_csv(res.summary, run_dir / "summary.csv"),
             write_boxplot_csv(res.trials, run_dir / "boxplot.csv"), run_dir / "config.yaml"]
    _manifest(run_dir, "eval", cfg, paths + [run_dir / "manifest.json"], controller=res.summary.controller,
              checkpoint=str(checkpoint) if checkpoint else None)
    for level, s in res.summary.levels.items():
        click.echo(f"level {level}: settled {s.n_settled}/{s.n_trials}, settling {s.settling_s.mean:.2f} s, "
                   f"RMS {s.rms_nm.mean:.2f} N m, peak {s.peak_nm.mean:.2f} N m, "
                   f"steady error {s.sse_deg.mean:.2f} deg", err=True)


def _read_cohort(path):
    path = Path(path)
    summary_path = path / "summary.csv" if path.is_dir() else path
    trials_path = summary_path.with_name("trials.csv")
    try:
        summary = read_summary_csv(summary_path)
        trials = read_trials_csv(trials_path) if trials_path.exists() else None
    except (OSError, ValueError, KeyError) as err:
        raise ArtifactError(f"cannot read cohort from {path}: {err}") from err
    return summary, trials


@cli.command("compare")
@click.argument("candidate", type=click.Path(exists=True))
@click.argument("baseline", type=click.Path(exists=True))
@out_opt
@_exit_codes
def cmd_compare(candidate, baseline, out):
    """Compare two eval runs (run directories or summary.csv files)."""
    cfg = _config(None, {"output_dir": out})
    cand, cand_trials = _read_cohort(candidate)
    base, base_trials = _read_cohort(baseline)
    table = compare(cand, base)
    run_dir = _run_dir(cfg, "compare")
    click.echo(str(run_dir))
    text = format_comparison(table)
    paths = [write_comparison_csv(table, run_dir / "comparison.csv"), run_dir / "comparison.txt"]
    (run_dir / "comparison.txt").write_text(text)
    if cand_trials is not None and base_trials is not None:
        paths.append(write_boxplot_csv(cand_trials + base_trials, run_dir / "boxplot.csv"))
    _manifest(run_dir, "compare", None, paths + [run_dir / "manifest.json"],
              inputs=[str(candidate), str(baseline)])
    click.echo(text, err=True)


@cli.command("sweep")
@config_opt
@seed_opt
@levels_opt
@click.option("--trials", type=int, default=20, show_default=True, help="Episodes per level.")
@pid_opt
@ckpt_opt
@out_opt
@_exit_codes
def cmd_sweep(config, seed, levels, trials, pid, checkpoint, out):
    """Export mean +- std trace bands per level for plotting."""
    cfg = _config(config, {"seed": seed, "cohort.levels": levels, "cohort.trials": trials, "output_dir": out})
    controller = _controller(cfg, pid, checkpoint)
    run_dir = _run_dir(cfg, "sweep")
    write_resolved(cfg, run_dir / "config.yaml")
    click.echo(str(run_dir))
    res = run_cohort(controller, cfg.cohort.levels, cfg.cohort.trials, cfg.seed, cfg.env, cfg.plant(),
                     batch_size=cfg.cohort.batch_size, keep_traces=True)
    paths = [write_band_csv(band, run_dir / f"band_level{level}.csv")
             for level, band in trace_bands(res.traces).items()]
    paths.append(write_boxplot_csv(res.trials, run_dir / "boxplot.csv"))
    _manifest(run_dir, "sweep", cfg, paths + [run_dir / "config.yaml", run_dir / "manifest.json"],
              controller=res.summary.controller)


def main(argv=None):
    cli.main(args=argv, prog_name="spastic-exo")


if __name__ == "__main__":
    main()
