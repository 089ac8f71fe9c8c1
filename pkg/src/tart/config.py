"""Flat ``key = value`` run configuration with command-line overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

from .errors import ConfigError
from .head import HeadConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # data
    corpus: str = ""
    split: str = ""
    embeddings: str = ""
    vocab_limit: int = 0
    trainable_embeddings: bool = False
    # model
    embed_dim: int = 256
    head: str = "tart"
    distance: str = "cosine"
    lam: float = 0.5
    cos_eps: float = 1e-8
    # optimisation and protocol
    lr: float = 1e-4
    episodes_per_epoch: int = 100
    patience_epochs: int = 20
    max_epochs: int = 1000
    val_episodes: int = 100
    test_episodes: int = 1000
    n_way: int = 5
    k_shot: int = 1
    q_queries: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seeds: tuple = (1, 2, 3, 4, 5)
    # runtime
    output_dir: str = "runs"
    workers: int = 1

    def train_config(self):
        return TrainConfig(
            lr=self.lr, episodes_per_epoch=self.episodes_per_epoch, patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs, val_episodes=self.val_episodes, test_episodes=self.test_episodes,
            seeds=self.seeds, n_way=self.n_way, k_shot=self.k_shot, q_queries=self.q_queries,
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
        )

    def head_config(self):
        return HeadConfig(self.distance, self.lam, self.cos_eps)

    def validate(self, need_corpus=True):
        if need_corpus:
            for key in ("corpus", "split"):
                path = getattr(self, key)
                if not path:
                    raise ConfigError(f"'{key}' is not set")
                if not os.path.exists(path):
                    raise ConfigError(f"{key} file not found: {path}")
        if self.embeddings and not os.path.exists(self.embeddings):
            raise ConfigError(f"embeddings file not found: {self.embeddings}")
        if self.embed_dim < self.n_way:
            raise ConfigError(f"embed_dim ({self.embed_dim}) must be >= n_way ({self.n_way})")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        self.head_config()
        self.train_config()
        return self

    def dump(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


# accepted spellings in files and on the command line
ALIASES = {"lambda": "lam", "seed": "seeds", "n": "n_way", "k": "k_shot", "q": "q_queries", "E": "embed_dim"}

_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key, raw):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(s) for s in raw.replace(" ", "").split(",") if s)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _canonical(key):
    key = key.strip().replace("-", "_")
    key = ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        key = _canonical(key)
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=None):
    """Read ``path`` (if given) then apply ``overrides`` (``{key: str}``); paths resolve against the file."""
    values = {}
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            values = parse_config_text(fh.read(), path)
        base = os.path.dirname(os.path.abspath(path))
        for key in ("corpus", "split", "embeddings"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base, values[key])
    for key, raw in (overrides or {}).items():
        key = _canonical(key)
        values[key] = _coerce(key, str(raw))
    return dataclasses.replace(RunConfig(), **values)
