"""Encoder + head bundle that turns an episode into losses and predictions."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .encoder import MeanAffineEncoder
from .errors import ConfigError
from .head import (
    HeadConfig,
    classification_loss,
    compute_W,
    drr_loss,
    init_reference,
    prototypes_from_batch,
    softmax_neg,
    total_loss,
    transformed_distances,
)
from .tensor import Tape, take_rows

KINDS = ("tart", "proto")


@dataclass
class EpisodeOutput:
    tape: Tape
    loss: object
    cls: object
    drr: object
    distances: object

    @property
    def probabilities(self):
        return softmax_neg(self.distances.value)


@dataclass
class TartModel:
    encoder: MeanAffineEncoder
    reference: np.ndarray
    head: HeadConfig
    kind: str = "tart"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}; choose from {KINDS}")
        if self.reference.shape[1] != self.encoder.out_dim:
            raise ConfigError("reference width must equal the encoder output dimension")
        if self.reference.shape[0] > self.encoder.out_dim:
            raise ConfigError("output dimension must be at least n_way")

    @classmethod
    def create(cls, n_way, in_dim, out_dim, rng, head=None, kind="tart", table=None, vocab=None):
        encoder = MeanAffineEncoder.create(in_dim, out_dim, rng, table, vocab)
        reference = init_reference(n_way, out_dim, rng)
        return cls(encoder, reference, head or HeadConfig(), kind)

    @property
    def n_way(self):
        return self.reference.shape[0]

    def parameters(self):
        params = dict(self.encoder.parameters())
        if self.kind == "tart":
            params["reference"] = self.reference
        return params

    def copy(self):
        """Deep copy of trainable state; a frozen embedding table stays shared."""
        enc = self.encoder
        table = enc.table
        if table is not None and table.trainable:
            table = copy.deepcopy(table)
        encoder = MeanAffineEncoder(enc.projection.copy(), enc.bias.copy(), table, enc.vocab)
        return TartModel(encoder, self.reference.copy(), self.head, self.kind)

    def forward(self, episode, tape=None):
        """Build the episode's loss on a fresh tape; DegenerateTaskError propagates."""
        if episode.n_way != self.n_way:
            raise ConfigError(f"episode is {episode.n_way}-way but the model has {self.n_way} references")
        tape = tape if tape is not None else Tape()
        inputs = [ex.features for ex in episode.support] + [ex.features for ex in episode.query]
        emb = self.encoder.encode_batch(inputs, tape)
        n_support = len(episode.support)
        support = take_rows(emb, np.arange(n_support))
        queries = take_rows(emb, np.arange(n_support, len(inputs)))
        protos = prototypes_from_batch(support, episode.support_ids, self.n_way)
        if self.kind == "proto":
            d = transformed_distances(queries, protos, None, self.head)
            cls = classification_loss(queries, episode.query_ids, protos, None, self.head)
            return EpisodeOutput(tape, cls, cls, None, d)
        W = compute_W(protos, tape.param("reference", self.reference))
        d = transformed_distances(queries, protos, W, self.head)
        cls = classification_loss(queries, episode.query_ids, protos, W, self.head)
        drr = drr_loss(protos, W, self.head)
        return EpisodeOutput(tape, total_loss(cls, drr, self.head), cls, drr, d)

    def predict(self, episode):
        """Predicted class id per query; ties go to the lowest id."""
        out = self.forward(episode)
        return np.argmax(-out.distances.value, axis=1)
