"""Run configuration: JSON file plus flag overrides plus the seed env var."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import INPUT_MODES
from .errors import DataError
from .model import ModelConfig
from .numcore import OptimizerConfig

SEED_ENV_VAR = "CONFNET2SEQ_SEED"


@dataclass
class RunConfig:
    corpus: str = ""
    embeddings: str | None = None
    checkpoint_dir: str = "checkpoints"
    embed_dim: int = 300
    hidden_size: int = 512
    layers: int = 3
    max_bins: int = 50
    max_arcs: int = 20
    max_len: int = 50
    vocab_size: int = 50000
    min_freq: int = 1
    batch_size: int = 32
    max_steps: int = 1000
    checkpoint_every: int = 500
    input_mode: str = "clean_confnet"
    beam_width: int = 5
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.input_mode not in INPUT_MODES:
            raise DataError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            embed_dim=self.embed_dim,
            hidden_size=self.hidden_size,
            layers=self.layers,
            max_bins=self.max_bins,
            max_arcs=self.max_arcs,
            max_len=self.max_len,
        )

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "optimizer"}
        d["optimizer"] = self.optimizer.to_dict()
        return d


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file and non-None overrides.

    The CONFNET2SEQ_SEED environment variable beats both.
    """
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            try:
                values = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise DataError(f"config file {path} must hold a JSON object")
        base = Path(path).parent
        # Paths in a config file are relative to the file itself.
        for key in ("corpus", "embeddings", "checkpoint_dir"):
            if values.get(key):
                values[key] = str((base / values[key]).resolve()) if not Path(values[key]).is_absolute() else values[key]
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise DataError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}") from None
    opt = values.pop("optimizer", {})
    known = set(RunConfig.__dataclass_fields__) - {"optimizer"}
    unknown = set(values) - known
    if unknown:
        raise DataError(f"unknown config keys: {sorted(unknown)}")
    if isinstance(opt, OptimizerConfig):
        optimizer = opt
    else:
        optimizer = OptimizerConfig.from_dict(opt)
    return RunConfig(optimizer=optimizer, **values)
