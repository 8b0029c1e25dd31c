"""Run configuration: defaults < config file < UNICORN_SEED < command-line flags."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .agent import AgentConfig
from .env import RewardScheme
from .pretrain import TransEConfig
from .rollout import EnvConfig

PATH_FIELDS = ("data_dir", "out_dir", "embeddings", "checkpoint")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths (not part of the config hash)
    data_dir: str = "data"
    out_dir: str = "runs"
    embeddings: str = ""
    checkpoint: str = ""
    # run
    seed: int = 0
    episodes: int = 1000
    train_split: str = "valid"
    eval_split: str = "test"
    policy: str = "unicorn"
    # model
    dim: int = 64
    hidden: int = 100
    gcn_layers: int = 2
    tf_layers: int = 1
    heads: int = 1
    ffn_dim: int = 64
    positional: bool = True
    canonical_dueling: bool = False
    pretrained_action_reps: bool = False
    # action selection / environment
    k_p: int = 10
    k_v: int = 10
    max_turn: int = 15
    rec_size: int = 10
    rec_suc: float = 1.0
    rec_fail: float = -0.1
    ask_suc: float = 0.01
    ask_fail: float = -0.1
    quit: float = -0.3
    # DQN
    buffer_capacity: int = 50_000
    batch_size: int = 128
    lr: float = 1e-4
    l2: float = 1e-6
    gamma: float = 0.999
    tau: float = 0.01
    eps_start: float = 1.0
    eps_decay: float = 0.999
    eps_min: float = 0.01
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    prio_eps: float = 1e-5
    # TransE
    transe_margin: float = 1.0
    transe_norm: str = "L2"
    transe_epochs: int = 100
    transe_lr: float = 0.01
    transe_batch_size: int = 128
    # synthetic data
    n_users: int = 30
    n_items: int = 60
    n_attrs: int = 15

    def agent_config(self) -> AgentConfig:
        names = {f.name for f in fields(AgentConfig)}
        return AgentConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            max_turn=self.max_turn,
            rec_size=self.rec_size,
            k_v=self.k_v,
            k_p=self.k_p,
            rewards=RewardScheme(self.rec_suc, self.rec_fail, self.ask_suc, self.ask_fail, self.quit),
        )

    def transe_config(self) -> TransEConfig:
        return TransEConfig(
            dim=self.dim,
            margin=self.transe_margin,
            norm=self.transe_norm,
            epochs=self.transe_epochs,
            batch_size=self.transe_batch_size,
            learning_rate=self.transe_lr,
            seed=self.seed,
        )

    def hashed(self) -> dict[str, Any]:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in PATH_FIELDS}

    def content_hash(self) -> str:
        blob = json.dumps(self.hashed(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def echo(self) -> dict[str, Any]:
        return {"config": self.hashed(), "config_hash": self.content_hash()}


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def coerce(name: str, value: Any) -> Any:
    kind = FIELD_TYPES[name]
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            return parse_bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None
    return value


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        out[key] = coerce(key, value)
    return out


def resolve(config_path: str | None = None, overrides: dict[str, Any] | None = None,
            environ: dict[str, str] | None = None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values: dict[str, Any] = {}
    if config_path:
        values.update(read_config_file(config_path))
    if environ.get("UNICORN_SEED"):
        values["seed"] = coerce("seed", environ["UNICORN_SEED"])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    return RunConfig(**values)
