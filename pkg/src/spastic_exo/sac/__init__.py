"""Soft actor-critic written directly on numpy."""

from .adam import Adam
from .agent import SacAgent, SacHyperparams, critic_targets
from .buffer import Batch, ReplayBuffer
from .checkpoint import CheckpointError, load_actor
from .mlp import Mlp, MlpSpec, StaleCacheError, soft_update
from .policy import DeterministicPolicy, sample_action
from .train import TrainingInterrupted, TrainResult, train

__all__ = [
    "Adam", "Batch", "CheckpointError", "DeterministicPolicy", "Mlp", "MlpSpec", "ReplayBuffer",
    "SacAgent", "SacHyperparams", "StaleCacheError", "TrainResult", "TrainingInterrupted",
    "critic_targets", "load_actor", "sample_action", "soft_update", "train",
]
