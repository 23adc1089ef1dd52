"""Off-policy training loop with periodic deterministic evaluation."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..environment import OBS_DIM, EnvConfig, KneeExoEnv, Plant, run_episodes
from ..musculoskeletal import SimulationError
from .agent import SacAgent, SacHyperparams
from .buffer import ReplayBuffer
from .checkpoint import save
from .mlp import Mlp
from .policy import DeterministicPolicy

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("step", "eval_return_mean", "eval_return_std", "alpha", "critic_loss")

# sink(tag, networks, scalars); tags are "best", "final" and "interrupted"
Sink = Callable[[str, dict, dict], None]


@dataclass(frozen=True)
class CurveRow:
    step: int
    eval_return_mean: float
    eval_return_std: float
    alpha: float
    critic_loss: float


@dataclass
class TrainResult:
    agent: SacAgent
    best_actor: Mlp
    best_return: float
    curve: list = field(default_factory=list)
    steps_done: int = 0
    sim_failures: int = 0


class TrainingInterrupted(KeyboardInterrupt):
    def __init__(self, result: TrainResult):
        super().__init__("training interrupted")
        self.result = result


def directory_sink(out_dir) -> Sink:
    out_dir = Path(out_dir)

    def sink(tag, networks, scalars):
        save(out_dir / f"{tag}.ckpt", networks, scalars)

    return sink


def eval_seeds(seed: int, n: int, levels) -> tuple[list[int], list[int]]:
    """Fixed evaluation set: ``n`` episodes cycling through ``levels``."""
    rng = np.random.default_rng([seed, 1])
    seeds = [int(s) for s in rng.integers(0, 2**62, size=n)]
    return [int(levels[i % len(levels)]) for i in range(n)], seeds


def evaluate_policy(actor: Mlp, levels, seeds, config: EnvConfig, plant: Plant) -> np.ndarray:
    traces = run_episodes(DeterministicPolicy(actor), levels, seeds, config, plant)
    return np.array([t.episode_return for t in traces])


def train(hyper: SacHyperparams = SacHyperparams(), config: EnvConfig = EnvConfig(), plant: Plant = Plant(),
          seed: int = 0, sink: Sink | None = None, env_factory: Callable[[], KneeExoEnv] | None = None,
          progress: Callable[[CurveRow], None] | None = None) -> TrainResult:
    """Train for ``hyper.total_steps`` environment steps.

    The first ``warmup_steps`` actions are uniform random; afterwards every
    step is followed by ``updates_per_step`` gradient updates once the buffer
    holds a full batch. Episode ends are time limits, so transitions are
    stored as non-terminal. Every ``eval_every`` steps the deterministic
    policy is scored on a fixed episode set and the best actor is kept.
    """
    env = env_factory() if env_factory is not None else KneeExoEnv(config, plant)
    rng = np.random.default_rng([seed, 0])
    agent = SacAgent(hyper, OBS_DIM, seed=np.random.default_rng([seed, 2]))
    buffer = ReplayBuffer(min(hyper.buffer_capacity, max(hyper.total_steps, 1)), OBS_DIM)
    ev_levels, ev_seeds = eval_seeds(seed, hyper.eval_episodes, config.levels)
    result = TrainResult(agent=agent, best_actor=agent.actor.copy(), best_return=-math.inf)
    full_state = lambda: (agent.networks(), {"log_alpha": float(agent.log_alpha[0])})

    def new_episode():
        return env.reset(seed=int(rng.integers(2**62)))

    critic_loss = math.nan
    try:
        obs = new_episode()
        for step in range(1, hyper.total_steps + 1):
            if step <= hyper.warmup_steps:
                action = float(rng.uniform(-1.0, 1.0))
            else:
                action = float(agent.act(obs, rng)[0])
            try:
                next_obs, reward, done, _ = env.step(action)
            except SimulationError as err:
                result.sim_failures += 1
                log.warning("training episode dropped: %s", err)
                obs = new_episode()
                continue
            buffer.push(obs, action, reward, next_obs, 0.0)
            obs = new_episode() if done else next_obs

            if step > hyper.warmup_steps and len(buffer) >= hyper.batch_size:
                for _ in range(hyper.updates_per_step):
                    critic_loss = agent.update(buffer.sample(hyper.batch_size, rng), rng).critic_loss
            result.steps_done = step

            if step % hyper.eval_every == 0:
                returns = evaluate_policy(agent.actor, ev_levels, ev_seeds, config, plant)
                row = CurveRow(step, float(np.mean(returns)), float(np.std(returns)), agent.alpha, critic_loss)
                result.curve.append(row)
                if progress is not None:
                    progress(row)
                if row.eval_return_mean > result.best_return:
                    result.best_return = row.eval_return_mean
                    result.best_actor = agent.actor.copy()
                    if sink is not None:
                        sink("best", {"actor": result.best_actor}, {})
    except KeyboardInterrupt:
        if sink is not None:
            sink("interrupted", *full_state())
        raise TrainingInterrupted(result) from None

    if not result.curve and sink is not None:
        sink("best", {"actor": result.best_actor}, {})
    if sink is not None:
        sink("final", *full_state())
    return result


def write_curve_csv(curve, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in curve:
            w.writerow([row.step] + [format(float(getattr(row, c)), ".17g") for c in CURVE_COLUMNS[1:]])
    return path


def read_curve_csv(path) -> list[CurveRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CURVE_COLUMNS:
            raise ValueError(f"{path}: expected columns {CURVE_COLUMNS}, got {reader.fieldnames}")
        return [CurveRow(int(r["step"]), *(float(r[c]) for c in CURVE_COLUMNS[1:])) for r in reader]
