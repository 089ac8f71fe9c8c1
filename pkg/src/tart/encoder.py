"""Word-vector loading, tokenization and the mean-pooled affine encoder."""

from __future__ import annotations

import re
import string
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, FormatError, ShapeError
from .tensor import Tape, add, as_matrix, gather_mean, matmul

_PUNCT = string.punctuation + "“”‘’«»…–—"


def tokenize(text):
    """Lowercase, split on whitespace, strip surrounding punctuation; drop empty tokens."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(_PUNCT)
        if tok:
            tokens.append(tok)
    return tokens


class Vocab:
    def __init__(self, words):
        self.index_to_token = list(words)
        self.token_to_index = {}
        for i, w in enumerate(self.index_to_token):
            if w in self.token_to_index:
                raise FormatError(f"duplicate word {w!r}")
            self.token_to_index[w] = i
        self.unk_index = len(self.index_to_token)

    def __len__(self):
        # known words plus the unknown slot
        return len(self.index_to_token) + 1

    def lookup(self, tokens):
        return [self.token_to_index.get(t, self.unk_index) for t in tokens]


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    trainable: bool = False

    @property
    def dim(self):
        return self.vectors.shape[1]


_HEADER = re.compile(r"^\s*\d+\s+\d+\s*$")


def load_embeddings(path, vocab_limit=None, trainable=False):
    """Read ``word v1 ... vD`` lines (optional ``V D`` header) into a vocab and table.

    The unknown-token row (all zeros) is appended last.
    """
    words, rows = [], []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and _HEADER.match(line):
                continue
            parts = line.split()
            if not parts:
                continue
            if vocab_limit is not None and len(words) >= vocab_limit:
                break
            if len(parts) < 2:
                raise FormatError("expected a word followed by its vector", lineno)
            if dim is None:
                dim = len(parts) - 1
            elif len(parts) - 1 != dim:
                raise FormatError(f"vector has {len(parts) - 1} components, expected {dim}", lineno)
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise FormatError(str(exc), lineno) from None
            words.append(parts[0])
            rows.append(vec)
    if not words:
        raise FormatError(f"{path}: no word vectors found")
    table = as_matrix(rows, "embeddings")
    table = np.vstack([table, np.zeros((1, dim))])
    return Vocab(words), EmbeddingTable(table, trainable)


@dataclass
class MeanAffineEncoder:
    """f(x) = mean(token rows) @ projection + bias.

    With ``table=None`` the inputs are pre-embedded vectors of length ``in_dim``
    and the mean over a single row is the vector itself.
    """

    projection: np.ndarray
    bias: np.ndarray
    table: EmbeddingTable | None = None
    vocab: Vocab | None = None

    @classmethod
    def create(cls, in_dim, out_dim, rng, table=None, vocab=None):
        a = np.sqrt(6.0 / (in_dim + out_dim))
        projection = rng.uniform(-a, a, size=(in_dim, out_dim))
        return cls(projection, np.zeros((1, out_dim)), table, vocab)

    @property
    def in_dim(self):
        return self.projection.shape[0]

    @property
    def out_dim(self):
        return self.projection.shape[1]

    def parameters(self):
        params = {"projection": self.projection, "bias": self.bias}
        if self.table is not None and self.table.trainable:
            params["embeddings"] = self.table.vectors
        return params

    def _index_lists(self, token_lists):
        if self.vocab is None:
            raise ShapeError("encoder has no vocabulary; feed vectors instead of tokens")
        lists = []
        for tokens in token_lists:
            if len(tokens) == 0:
                raise EmptyInputError("cannot encode an empty token list")
            lists.append(self.vocab.lookup(tokens))
        return lists

    def pooled(self, inputs, tape):
        """Mean-pooled inputs as a node (M x D); constant unless embeddings train."""
        if len(inputs) == 0:
            raise EmptyInputError("no inputs to encode")
        if self.table is None:
            x = np.vstack([np.asarray(v, dtype=np.float64).reshape(1, -1) for v in inputs])
            if x.shape[1] != self.in_dim:
                raise ShapeError(f"vector inputs have {x.shape[1]} dims, encoder expects {self.in_dim}")
            return tape.const(x)
        lists = self._index_lists(inputs)
        if self.table.trainable:
            return gather_mean(tape.param("embeddings", self.table.vectors), lists)
        vecs = self.table.vectors
        return tape.const(np.vstack([vecs[ix].mean(axis=0) for ix in lists]))

    def encode_batch(self, inputs, tape):
        x = self.pooled(inputs, tape)
        return add(matmul(x, tape.param("projection", self.projection)), tape.param("bias", self.bias))

    def encode(self, tokens, tape=None):
        tape = tape if tape is not None else Tape()
        return self.encode_batch([tokens], tape)
