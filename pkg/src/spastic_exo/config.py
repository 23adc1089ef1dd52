"""Run configuration: YAML file, command-line overrides, resolved dump.

Precedence is flags > file > defaults. Unknown keys anywhere are errors.
"""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from .coupling import CouplingParams
from .environment import EnvConfig, Plant
from .musculoskeletal import BodyParams
from .pid import PidGains
from .reward import RewardConfig
from .sac.agent import SacHyperparams
from .spasticity import as_level, load_level_table

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration could not be read or validated."""


class CohortConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    levels: tuple[int, ...] = (0, 1, 2, 3)
    trials: int = 1000
    batch_size: int = 250  # episodes stepped together

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if not v:
            raise ValueError("levels must not be empty")
        return tuple(as_level(x).level_id for x in v)

    @field_validator("trials", "batch_size")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    schema_version: int = CONFIG_SCHEMA_VERSION
    seed: int = 0
    output_dir: Optional[str] = None
    env: EnvConfig = EnvConfig()
    body: BodyParams = BodyParams()
    coupling: CouplingParams = CouplingParams()
    reward: RewardConfig = RewardConfig()
    level_table: Optional[str] = None  # path to a level table; bundled one if unset
    sac: SacHyperparams = SacHyperparams()
    pid: PidGains = PidGains()
    cohort: CohortConfig = CohortConfig()

    @field_validator("schema_version")
    @classmethod
    def _schema(cls, v):
        if v != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (expected {CONFIG_SCHEMA_VERSION})")
        return v

    def plant(self) -> Plant:
        table = load_level_table(self.level_table) if self.level_table else None
        return Plant(body=self.body, coupling=self.coupling, reward=self.reward, level_table=table)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


def _deep_set(tree: dict, dotted: str, value):
    node = tree
    *parents, leaf = dotted.split(".")
    for key in parents:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override {dotted}: {key} is not a section")
    node[leaf] = value


def read_yaml(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from err
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def build_config(path=None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then dotted-key ``overrides`` (None values skipped)."""
    data = read_yaml(path) if path is not None else {}
    data = copy.deepcopy(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            _deep_set(data, key, value)
    try:
        cfg = RunConfig.model_validate(data)
        if cfg.level_table:
            load_level_table(cfg.level_table)
    except ValidationError as err:
        where = f" in {path}" if path is not None else ""
        raise ConfigError(f"invalid configuration{where}:\n{err}") from None
    except (OSError, ValueError) as err:
        raise ConfigError(f"invalid level table: {err}") from err
    return cfg


def write_resolved(cfg: RunConfig, path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.resolved(), sort_keys=False))
    return path
