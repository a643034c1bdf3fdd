"""One declarative config file (YAML) with ``MANTIS_*`` environment overrides.

Nested keys are joined with a double underscore in the environment:
``MANTIS_PIPELINE__FPR_TARGET=0.001`` sets ``pipeline.fpr_target``.
Values are parsed as YAML scalars, so numbers and booleans keep their types.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .adversarial import AttackBudget
from .pipelines import PipelineConfig

ENV_PREFIX = "MANTIS_"


class ConfigError(ValueError):
    pass


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    ensemble_dir: str = "runs/ensemble"
    blocklist_dir: str = "runs/blocklists"
    predict_day: str | None = None  # defaults to the ensemble's last training day


@dataclass
class EnsembleConfig:
    last_day: str | None = None  # newest encoder window end; defaults to 14 days before the data ends
    meta_days: int = 14
    holdout_frac: float = 0.3
    encoder_folds: int = 5


@dataclass
class Config:
    data_dir: str = "data/world"
    out_dir: str = "runs"
    log_level: str = "INFO"
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    attack: AttackBudget = field(default_factory=AttackBudget)
    service: ServiceConfig = field(default_factory=ServiceConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["pipeline"] = self.pipeline.to_dict()
        return d


def _update(obj, values: Mapping[str, Any], path: str = ""):
    """Return a copy of dataclass ``obj`` with ``values`` applied recursively."""
    if not dataclasses.is_dataclass(obj):
        raise ConfigError(f"{path or 'config'} is not a section")
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, val in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            if not isinstance(val, Mapping):
                raise ConfigError(f"{path + key} must be a mapping")
            changes[key] = _update(cur, val, f"{path}{key}.")
        else:
            changes[key] = tuple(val) if isinstance(cur, tuple) and isinstance(val, list) else val
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value under {path or 'config'}: {exc}") from exc


def env_overrides(env: Mapping[str, str]) -> dict:
    out: dict = {}
    for k, v in sorted(env.items()):
        if not k.startswith(ENV_PREFIX):
            continue
        parts = k[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(v) if v != "" else None
    return out


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> Config:
    cfg = Config()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        cfg = _update(cfg, data)
    overrides = env_overrides(os.environ if env is None else env)
    if overrides:
        cfg = _update(cfg, overrides)
    return cfg


def dump_config(cfg: Config, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
