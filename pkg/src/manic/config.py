"""Run configuration: one flat JSON file, CLI overrides, env seed override.

Every hyperparameter the papers of record leave open lives here with its
default. Artifacts embed the hash of the resolved config so runs stay
attributable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import PreconditionError


@dataclass
class RunConfig:
    # environment
    environment: str = "crane"
    transition_noise: float = 0.005
    observation_noise: float = 0.01
    # beliefs + estimation
    belief_dims: int = 2
    nldr_k: int = 12
    # model topologies
    f_hidden: tuple = (32,)
    g_hidden: tuple = (64, 64)
    g_plus_hidden: tuple = (64,)
    contentment_hidden: tuple = (16,)
    # training
    epochs: int = 50
    rate: float = 0.01
    pixels_per_frame: int = 256
    holdout_frac: float = 0.1
    with_encoder: bool = True
    # planner
    pool_size: int = 32
    horizon: int = 8
    refine_iterations: int = 10
    crossover_p: float = 0.7
    mutation_p: float = 0.2
    # agent
    encoder_mode: str = "hybrid"
    refine_steps: int = 10
    refine_rate: float = 0.5
    online_learning: bool = False
    online_rate: float = 0.001
    track_error_signal: bool = True
    introspection: bool = False
    introspection_samples: int = 64
    # seeds
    seed: int = 0

    def resolved(self) -> dict:
        doc = asdict(self)
        for key, value in doc.items():
            if isinstance(value, tuple):
                doc[key] = list(value)
        return doc

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.resolved(), sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        doc = self.resolved()
        doc["config_hash"] = self.config_hash()
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    default = getattr(RunConfig(), name)
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [int(p) for p in value.split(",") if p.strip()]
        return tuple(int(v) for v in value)
    return value


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults <- config file <- --set overrides <- MANIC_SEED."""
    doc = {}
    if path is not None:
        doc.update(json.loads(Path(path).read_text()))
        doc.pop("config_hash", None)
    for item in overrides or []:
        if "=" not in item:
            raise PreconditionError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        doc[key.strip()] = value.strip()
    unknown = set(doc) - set(_FIELD_TYPES)
    if unknown:
        raise PreconditionError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig()
    for key, value in doc.items():
        setattr(cfg, key, _coerce(key, value))
    env_seed = os.environ.get("MANIC_SEED")
    if env_seed is not None:
        cfg.seed = int(env_seed)
    return cfg
