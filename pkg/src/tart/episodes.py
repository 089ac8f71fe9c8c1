"""Corpora, disjoint class splits, seeded N-way K-shot sampling, synthetic tasks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import tokenize
from .errors import ConfigError, FormatError, SamplingError


@dataclass(frozen=True)
class Example:
    label: str
    text: str | None = None
    tokens: tuple = ()
    vector: np.ndarray | None = field(default=None, compare=False)

    @property
    def features(self):
        """What the encoder consumes: the vector when present, otherwise the tokens."""
        return self.vector if self.vector is not None else self.tokens


class Corpus:
    def __init__(self, examples):
        self.examples = list(examples)
        self.label_index = {}
        for i, ex in enumerate(self.examples):
            self.label_index.setdefault(ex.label, []).append(i)

    def __len__(self):
        return len(self.examples)

    @property
    def labels(self):
        return sorted(self.label_index)

    @property
    def is_vector(self):
        return bool(self.examples) and self.examples[0].vector is not None

    @property
    def vector_dim(self):
        return self.examples[0].vector.shape[0] if self.is_vector else None


def _parse_record(line, lineno):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed record: {exc.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise FormatError("record is not an object", lineno)
    label = rec.get("label")
    if not isinstance(label, str):
        raise FormatError("missing or non-string 'label'", lineno)
    if "vector" in rec:
        vec = rec["vector"]
        if not isinstance(vec, list) or not vec or not all(isinstance(v, (int, float)) for v in vec):
            raise FormatError("'vector' must be a non-empty array of numbers", lineno)
        arr = np.asarray(vec, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FormatError("'vector' has non-finite entries", lineno)
        return Example(label, vector=arr)
    text = rec.get("text")
    if not isinstance(text, str):
        raise FormatError("missing or non-string 'text'", lineno)
    return Example(label, text=text, tokens=tuple(tokenize(text)))


def load_corpus(path):
    """Read one JSON object per line with ``label`` and either ``text`` or ``vector``."""
    examples = []
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            ex = _parse_record(line, lineno)
            kind = None if ex.vector is None else ex.vector.shape[0]
            if examples and kind != dim:
                raise FormatError("records mix text and vectors or vector lengths differ", lineno)
            dim = kind
            examples.append(ex)
    return Corpus(examples)


def write_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in corpus.examples:
            if ex.vector is not None:
                rec = {"vector": [float(v) for v in ex.vector], "label": ex.label}
            else:
                rec = {"text": ex.text, "label": ex.label}
            fh.write(json.dumps(rec) + "\n")


@dataclass(frozen=True)
class ClassSplit:
    train: tuple
    val: tuple
    test: tuple

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        pairs = (("train", "val"), ("train", "test"), ("val", "test"))
        for a, b in pairs:
            shared = set(getattr(self, a)) & set(getattr(self, b))
            if shared:
                raise ConfigError(f"{a} and {b} classes overlap: {sorted(shared)}")

    def labels(self, name):
        if name not in ("train", "val", "test"):
            raise ConfigError(f"unknown split {name!r}")
        return getattr(self, name)

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test)}


def load_split(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: split file must hold an object")
    parts = {}
    for key in ("train", "val", "test"):
        labels = obj.get(key)
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise FormatError(f"{path}: '{key}' must be an array of label strings")
        parts[key] = labels
    return ClassSplit(**parts)


def write_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh, indent=1)
        fh.write("\n")


@dataclass
class Episode:
    n_way: int
    k_shot: int
    q_queries: int
    support: list
    support_ids: np.ndarray
    query: list
    query_ids: np.ndarray
    original_labels: tuple
    support_indices: tuple
    query_indices: tuple


def make_rng(seed):
    """Generator from an int or a tuple of non-negative ints (hashed via SeedSequence)."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else seed
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_episode(corpus, split_labels, n, k, q, rng_seed):
    """Draw an N-way K-shot episode with Q queries per class.

    Labels are taken in sorted order before drawing, so the result depends only
    on the seed and the data.
    """
    if min(n, k) < 1 or q < 0:
        raise SamplingError(f"invalid episode shape n={n} k={k} q={q}")
    need = k + q
    candidates = sorted(set(split_labels))
    missing = [lab for lab in candidates if lab not in corpus.label_index]
    eligible = [lab for lab in candidates if len(corpus.label_index.get(lab, ())) >= need]
    if len(eligible) < n:
        short = [lab for lab in candidates if lab not in eligible]
        detail = ", ".join(f"{lab!r} ({len(corpus.label_index.get(lab, ()))})" for lab in short) or "none"
        raise SamplingError(
            f"need {n} labels with >= {need} examples, found {len(eligible)}; deficient: {detail}",
            short or missing,
        )
    rng = make_rng(rng_seed)
    chosen = [eligible[i] for i in rng.choice(len(eligible), size=n, replace=False)]
    support, query, s_ids, q_ids, s_idx, q_idx = [], [], [], [], [], []
    for cid, label in enumerate(chosen):
        pool = corpus.label_index[label]
        picks = [pool[i] for i in rng.choice(len(pool), size=need, replace=False)]
        for j, idx in enumerate(picks):
            if j < k:
                support.append(corpus.examples[idx])
                s_ids.append(cid)
                s_idx.append(idx)
            else:
                query.append(corpus.examples[idx])
                q_ids.append(cid)
                q_idx.append(idx)
    return Episode(
        n, k, q, support, np.array(s_ids, dtype=np.intp), query, np.array(q_ids, dtype=np.intp),
        tuple(chosen), tuple(s_idx), tuple(q_idx),
    )


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticMeta:
    means: np.ndarray
    clustered: tuple
    separated: tuple
    params: dict


def _unit(v):
    return v / np.linalg.norm(v)


def make_synthetic_corpus(n_classes, per_class, inter_class_gap, noise, dim, rng_seed,
                          cluster_size=3, cluster_radius=0.0, separation=6.0, isotropic_ratio=0.15):
    """Pre-embedded Gaussian classes, half of them in a low inter-class-variance regime.

    The first ``n_classes // 2`` classes are clustered in groups of
    ``cluster_size`` around a shared group direction ``u``: class ``c`` has mean
    ``cluster_radius * u + (gap / sqrt 2) * e_c`` where the offsets ``e_c`` are
    orthonormal and orthogonal to ``u``, so means within a group are exactly
    ``gap`` apart. The other classes sit at ``separation`` along their own
    random direction ``u``.

    Within-class variation is dominated by the class's own anchor direction:
    sample = mean + noise * (z * u + isotropic_ratio * n) with z ~ N(0, 1) and
    n ~ N(0, I). Clustered classes therefore differ by less than their spread
    along the direction they share.
    """
    if n_classes < 2 or per_class < 1:
        raise ConfigError("need n_classes >= 2 and per_class >= 1")
    if not inter_class_gap >= 0.0:
        raise ConfigError(f"inter_class_gap must be >= 0, got {inter_class_gap}")
    if not noise > 0.0:
        raise ConfigError(f"noise must be > 0, got {noise}")
    if not isotropic_ratio >= 0.0:
        raise ConfigError(f"isotropic_ratio must be >= 0, got {isotropic_ratio}")
    if cluster_size < 1:
        raise ConfigError("cluster_size must be >= 1")
    if dim < cluster_size + 1:
        raise ConfigError(f"dim must be at least cluster_size + 1 = {cluster_size + 1}")
    rng = make_rng(rng_seed)
    n_clustered = n_classes // 2
    means = np.empty((n_classes, dim))
    anchors = np.empty((n_classes, dim))
    for start in range(0, n_clustered, cluster_size):
        members = range(start, min(start + cluster_size, n_clustered))
        # orthonormal frame: group direction first, then one offset per member
        frame, _ = np.linalg.qr(rng.standard_normal((dim, len(members) + 1)))
        u = frame[:, 0]
        for j, c in enumerate(members):
            means[c] = cluster_radius * u + inter_class_gap / np.sqrt(2.0) * frame[:, j + 1]
            anchors[c] = u
    for c in range(n_clustered, n_classes):
        anchors[c] = _unit(rng.standard_normal(dim))
        means[c] = separation * anchors[c]
    width = len(str(n_classes - 1))
    names = [f"{'clu' if c < n_clustered else 'sep'}{c:0{width}d}" for c in range(n_classes)]
    z = rng.standard_normal((n_classes, per_class, 1))
    iso = rng.standard_normal((n_classes, per_class, dim))
    samples = means[:, None, :] + noise * (z * anchors[:, None, :] + isotropic_ratio * iso)
    examples = [Example(names[c], vector=samples[c, i]) for c in range(n_classes) for i in range(per_class)]
    meta = SyntheticMeta(
        means,
        tuple(names[:n_clustered]),
        tuple(names[n_clustered:]),
        {
            "n_classes": n_classes, "per_class": per_class, "inter_class_gap": inter_class_gap,
            "noise": noise, "dim": dim, "seed": rng_seed, "cluster_size": cluster_size,
            "cluster_radius": cluster_radius, "separation": separation, "isotropic_ratio": isotropic_ratio,
        },
    )
    return Corpus(examples), meta


def synthetic_split(meta, eval_clustered=3, eval_separated=2):
    """Val and test each get ``eval_clustered`` clustered plus ``eval_separated`` separated classes.

    Everything else trains. Clustered eval classes share the low-variance
    direction, so every eval episode contains the hard regime.
    """
    clu, sep = list(meta.clustered), list(meta.separated)
    if len(clu) < 2 * eval_clustered + 1 or len(sep) < 2 * eval_separated + 1:
        raise ConfigError("not enough synthetic classes for disjoint train/val/test splits")
    test = clu[:eval_clustered] + sep[:eval_separated]
    val = clu[eval_clustered:2 * eval_clustered] + sep[eval_separated:2 * eval_separated]
    train = clu[2 * eval_clustered:] + sep[2 * eval_separated:]
    return ClassSplit(train, val, test)
