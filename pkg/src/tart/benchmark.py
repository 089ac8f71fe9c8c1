"""Synthetic low inter-class-variance benchmark: TART against the PROTO baseline."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .episodes import make_rng, make_synthetic_corpus, synthetic_split
from .head import HeadConfig
from .model import TartModel
from .training import TrainConfig, evaluate, train


@dataclass(frozen=True)
class BenchmarkConfig:
    n_classes: int = 30
    per_class: int = 40
    gap: float = 1.0
    noise: float = 1.0
    dim: int = 16
    embed_dim: int = 16
    isotropic_ratio: float = 0.15
    cluster_size: int = 3
    lr: float = 1e-2
    epochs: int = 10
    episodes_per_epoch: int = 100
    val_episodes: int = 50
    test_episodes: int = 200
    n_way: int = 5
    k_shot: int = 1
    q_queries: int = 5

    def train_config(self):
        return TrainConfig(
            lr=self.lr, episodes_per_epoch=self.episodes_per_epoch, patience_epochs=self.epochs,
            max_epochs=self.epochs, val_episodes=self.val_episodes, test_episodes=self.test_episodes,
            n_way=self.n_way, k_shot=self.k_shot, q_queries=self.q_queries,
        )


def benchmark_data(seed, cfg=BenchmarkConfig()):
    corpus, meta = make_synthetic_corpus(
        cfg.n_classes, cfg.per_class, cfg.gap * cfg.noise, cfg.noise, cfg.dim, (seed, 99),
        cluster_size=cfg.cluster_size, isotropic_ratio=cfg.isotropic_ratio,
    )
    return corpus, synthetic_split(meta)


def run_once(seed, kind="tart", lam=0.5, cfg=BenchmarkConfig(), trained=True):
    """Train (optionally) and evaluate one model; returns test accuracy."""
    corpus, split = benchmark_data(seed, cfg)
    tcfg = cfg.train_config()
    model = TartModel.create(cfg.n_way, cfg.dim, cfg.embed_dim, make_rng((seed, 7)), HeadConfig(lam=lam), kind)
    if trained:
        model = train(model, corpus, split, tcfg, seed)[0].model
    return evaluate(model, corpus, split.test, tcfg, cfg.test_episodes, seed).mean_accuracy


def run_many(seeds, kind="tart", lam=0.5, cfg=BenchmarkConfig(), trained=True):
    return np.array([run_once(s, kind, lam, cfg, trained) for s in seeds])


def nearest_mean_accuracy(seed, cfg=BenchmarkConfig(), n_episodes=None):
    """Untrained PROTO with an identity encoder: the separability oracle used for calibration."""
    corpus, split = benchmark_data(seed, cfg)
    tcfg = cfg.train_config()
    model = TartModel.create(cfg.n_way, cfg.dim, cfg.dim, make_rng((seed, 7)), HeadConfig(lam=0.0), "proto")
    model.encoder.projection[...] = np.eye(cfg.dim)
    model.encoder.bias[...] = 0.0
    return evaluate(model, corpus, split.test, tcfg, n_episodes or cfg.test_episodes, seed).mean_accuracy


def with_gap(gap, cfg=BenchmarkConfig()):
    return replace(cfg, gap=gap)
