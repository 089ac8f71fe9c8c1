"""Task-adaptive reference transformation head and the prototype baseline.

Per episode the normalized prototype matrix ``P`` (N x E) and the normalized
reference matrix ``R`` (N x E) define the linear map

    W = P^T (P P^T)^{-1} R        so that  P W = R,

i.e. the Moore-Penrose right inverse of ``P`` (full row rank, N <= E) times
``R``. Queries and prototypes are compared after multiplication by ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateTaskError, EmptyInputError, ShapeError, SingularMatrixError
from .tensor import (
    Node,
    concat_rows,
    cosine_distance,
    inverse,
    logsumexp_rows,
    matmul,
    mean_all,
    mean_rows,
    mul,
    pick,
    row_normalize,
    scale,
    sq_euclidean_distance,
    sum_all,
    take_rows,
    transpose,
)

DISTANCES = ("cosine", "sqeuclidean")
# normalized prototypes whose cosine reaches this are treated as the same point
_COLLISION_COS = 1.0 - 1e-12


@dataclass(frozen=True)
class HeadConfig:
    distance: str = "cosine"
    lam: float = 0.5
    eps: float = 1e-8

    def __post_init__(self):
        if self.distance not in DISTANCES:
            raise ConfigError(f"unknown distance {self.distance!r}; choose from {DISTANCES}")
        if not self.lam >= 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")


@dataclass
class PrototypeSet:
    raw: Node
    norm: Node

    @property
    def n(self):
        return self.raw.value.shape[0]


def init_reference(n_way, dim, rng):
    a = np.sqrt(6.0 / (n_way + dim))
    return rng.uniform(-a, a, size=(n_way, dim))


def compute_prototypes(groups):
    """Class means of per-class embedding nodes (each k_c x E), in class order."""
    groups = list(groups)
    if not groups:
        raise EmptyInputError("no classes to build prototypes from")
    for c, g in enumerate(groups):
        if g.value.shape[0] == 0:
            raise EmptyInputError(f"class {c} has no support embeddings")
    raw = concat_rows([mean_rows(g) for g in groups])
    return PrototypeSet(raw, row_normalize(raw))


def prototypes_from_batch(embeddings, class_ids, n_way):
    """Group rows of a support embedding batch by class id and average them."""
    class_ids = np.asarray(class_ids)
    groups = []
    for c in range(n_way):
        rows = np.flatnonzero(class_ids == c)
        if rows.size == 0:
            raise EmptyInputError(f"class {c} has no support embeddings")
        groups.append(take_rows(embeddings, rows))
    return compute_prototypes(groups)


def _closest_pair(pn):
    cos = pn @ pn.T
    np.fill_diagonal(cos, -np.inf)
    i, j = np.unravel_index(np.argmax(cos), cos.shape)
    return (int(min(i, j)), int(max(i, j))), float(cos[i, j])


def check_distinct(pn):
    """Raise DegenerateTaskError when two normalized prototypes coincide or one is zero."""
    zero = np.flatnonzero(np.linalg.norm(pn, axis=1) == 0.0)
    if zero.size:
        raise DegenerateTaskError((int(zero[0]),), f"degenerate task: prototype of class {zero[0]} is zero")
    if pn.shape[0] < 2:
        return
    pair, cos = _closest_pair(pn)
    if cos >= _COLLISION_COS:
        raise DegenerateTaskError(pair)


def compute_W(protos, reference):
    """Transformation matrix ``W`` (E x E) mapping normalized prototypes onto normalized references."""
    pn = protos.norm
    n, e = pn.value.shape
    if reference.value.shape != (n, e):
        raise ShapeError(f"reference is {reference.value.shape}, prototypes are {(n, e)}")
    if n > e:
        raise ShapeError(f"{n} prototypes cannot have full row rank in {e} dimensions")
    check_distinct(pn.value)
    pt = transpose(pn)
    try:
        gram_inv = inverse(matmul(pn, pt))
    except SingularMatrixError as exc:
        pair, _ = _closest_pair(pn.value)
        raise DegenerateTaskError(pair, f"degenerate task: {exc}") from exc
    return matmul(matmul(pt, gram_inv), row_normalize(reference))


def pairwise_distance(a, b, cfg):
    if cfg.distance == "cosine":
        return cosine_distance(a, b, cfg.eps)
    return sq_euclidean_distance(a, b)


def distance(u, v, cfg):
    """d(u, v) for two 1 x E nodes, as a 1 x 1 node."""
    if u.value.shape[0] != 1 or v.value.shape[0] != 1:
        raise ShapeError("distance takes single-row nodes")
    return pairwise_distance(u, v, cfg)


def transformed_distances(queries, protos, W, cfg):
    """Query-to-prototype distances (M x N) after both sides are mapped by ``W``.

    ``W=None`` means the identity, which gives the prototype baseline.
    """
    if W is None:
        return pairwise_distance(queries, protos.raw, cfg)
    return pairwise_distance(matmul(queries, W), matmul(protos.raw, W), cfg)


def softmax_neg(d):
    z = -d
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classify(queries, protos, W, cfg):
    """Class probabilities (M x N) as a plain array: softmax over negative transformed distances."""
    return softmax_neg(transformed_distances(queries, protos, W, cfg).value)


def proto_baseline_classify(queries, protos, cfg):
    return classify(queries, protos, None, cfg)


def classification_loss(queries, labels, protos, W, cfg):
    """Mean over queries of ``d(q, p_y) + log sum_c exp(-d(q, p_c))``."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.shape != (queries.value.shape[0],):
        raise ShapeError("one label per query required")
    if labels.size and (labels.min() < 0 or labels.max() >= protos.n):
        raise ValueError(f"labels must lie in 0..{protos.n - 1}")
    d = transformed_distances(queries, protos, W, cfg)
    per_query = pick(d, labels) + logsumexp_rows(scale(d, -1.0))
    return mean_all(per_query)


def drr_loss(protos, W, cfg):
    """Negative sum of distances over ordered pairs i != j of transformed prototypes."""
    n = protos.n
    if n < 2:
        raise DegenerateTaskError(tuple(range(n)), "discriminative regularization needs at least two classes")
    t = protos.raw if W is None else matmul(protos.raw, W)
    d = pairwise_distance(t, t, cfg)
    off_diag = d.tape.const(1.0 - np.eye(n))
    return scale(sum_all(mul(d, off_diag)), -1.0)


def total_loss(l_cls, l_drr, cfg):
    return l_cls + scale(l_drr, cfg.lam)
