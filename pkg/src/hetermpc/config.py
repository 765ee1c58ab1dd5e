"""Run configuration: one flat TOML file, overridden by CLI flags.

Relative paths in a config file resolve against the file's directory, so
bundled configs work from any working directory.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_PATH_KEYS = ("corpus", "valid_corpus", "vocab", "checkpoint", "out")


@dataclass
class RunConfig:
    # paths
    corpus: Optional[str] = None
    valid_corpus: Optional[str] = None
    vocab: Optional[str] = None
    checkpoint: Optional[str] = None
    out: Optional[str] = None
    # model
    d: int = 64
    heads: int = 2
    l1: int = 9
    l2: int = 3
    l3: int = 6
    max_utt_len: int = 50
    max_gen_len: int = 50
    min_count: int = 1
    # variants
    tie_node_types: bool = False
    tie_edge_types: bool = False
    use_interlocutor_nodes: bool = True
    per_iteration_graph_params: bool = False
    memory_cls_only: bool = False
    general_addressee: bool = True
    # optimization
    seed: int = 0
    lr: float = 6.25e-5
    clip_norm: float = 1.0
    batch_size: int = 16
    grad_accum_steps: int = 8
    max_epochs: int = 15
    weight_decay: float = 0.01
    eval_every: int = 50

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            d=self.d, heads=self.heads, l1=self.l1, l2=self.l2,
            max_utt_len=self.max_utt_len,
            tie_node_types=self.tie_node_types,
            tie_edge_types=self.tie_edge_types,
            per_iteration_graph_params=self.per_iteration_graph_params,
        )

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(
            l3=self.l3, d=self.d, heads=self.heads,
            max_gen_len=self.max_gen_len,
            memory_cls_only=self.memory_cls_only,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, clip_norm=self.clip_norm, batch_size=self.batch_size,
            grad_accum_steps=self.grad_accum_steps, max_epochs=self.max_epochs,
            seed=self.seed, weight_decay=self.weight_decay,
            eval_every=self.eval_every,
        )


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    f = _FIELDS[key]
    base = f.type if isinstance(f.type, type) else None
    if f.default is None or key in _PATH_KEYS:
        return None if value is None else str(value)
    want = type(f.default)
    if want is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
        raise ConfigError(f"config key {key!r} expects a boolean, got {value!r}")
    try:
        return want(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def load_run_config(path=None, overrides=None) -> RunConfig:
    """Read the TOML file (optional), then apply non-None overrides on top."""
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "rb") as f:
            try:
                raw = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))
        for key, value in raw.items():
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            if key in _PATH_KEYS and isinstance(value, str) and not os.path.isabs(value):
                value = os.path.join(base, value)
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise ConfigError(f"unknown config override {key!r}")
        values[key] = _coerce(key, value)
    return RunConfig(**values)
