"""Episodic optimization with Adam, early stopping, evaluation and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .encoder import EmbeddingTable, MeanAffineEncoder
from .episodes import sample_episode
from .errors import CheckpointError, ConfigError, DegenerateTaskError, NumericalError, TrainingError
from .head import DISTANCES, HeadConfig
from .model import KINDS, TartModel

log = logging.getLogger(__name__)

# seed streams: train episodes, validation episodes, evaluation episodes
TRAIN_STREAM, VAL_STREAM, EVAL_STREAM = 1, 2, 3


@dataclass
class TrainConfig:
    lr: float = 1e-4
    episodes_per_epoch: int = 100
    patience_epochs: int = 20
    max_epochs: int = 1000
    val_episodes: int = 100
    test_episodes: int = 1000
    seeds: tuple = (1, 2, 3, 4, 5)
    n_way: int = 5
    k_shot: int = 1
    q_queries: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("episodes_per_epoch", "patience_epochs", "max_epochs", "val_episodes",
                     "test_episodes", "n_way", "k_shot", "q_queries"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.lr >= 0.0:
            raise ConfigError("lr must be >= 0")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")


@dataclass
class TrainState:
    model: TartModel
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    best_val_acc: float = -math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0

    def __post_init__(self):
        for name, p in self.model.parameters().items():
            self.m.setdefault(name, np.zeros_like(p))
            self.v.setdefault(name, np.zeros_like(p))

    def copy(self):
        return TrainState(
            self.model.copy(),
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.step, self.epoch, self.best_val_acc, self.best_epoch, self.epochs_since_improvement,
        )


def adam_step(state, grads, cfg):
    """Bias-corrected Adam update of ``state.model`` in place; ``grads`` are zeroed afterwards."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericalError(f"gradient of {name!r} has {bad} non-finite entries at step {state.step + 1}")
    params = state.model.parameters()
    state.step += 1
    bc1 = 1.0 - cfg.beta1**state.step
    bc2 = 1.0 - cfg.beta2**state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * (g * g)
        params[name] -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
        g[...] = 0.0
    return state


def _episode(corpus, labels, cfg, seed):
    return sample_episode(corpus, labels, cfg.n_way, cfg.k_shot, cfg.q_queries, seed)


def episode_accuracy(model, episode):
    """Fraction of correct queries, or None for a degenerate episode."""
    try:
        pred = model.predict(episode)
    except DegenerateTaskError:
        return None
    return float(np.mean(pred == episode.query_ids))


@dataclass
class EvalReport:
    mean_accuracy: float
    ci95: float
    n_episodes: int
    per_seed: list
    skipped_degenerate_episodes: int
    warning: str | None = None
    accuracies: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self):
        d = {
            "mean_accuracy": self.mean_accuracy,
            "ci95": self.ci95,
            "n_episodes": self.n_episodes,
            "per_seed": list(self.per_seed),
            "skipped_degenerate_episodes": self.skipped_degenerate_episodes,
        }
        if self.warning:
            d["warning"] = self.warning
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def _report(accs, skipped, per_seed=None):
    n = len(accs)
    if n == 0:
        return EvalReport(0.0, 0.0, 0, list(per_seed or []), skipped, "all episodes degenerate", [])
    arr = np.asarray(accs)
    mean = float(arr.mean())
    ci = float(1.96 * arr.std() / math.sqrt(n))
    return EvalReport(mean, ci, n, list(per_seed) if per_seed is not None else [mean], skipped, None, list(accs))


def evaluate(model, corpus, labels, cfg, n_episodes=None, run_seed=0, workers=1, stream=EVAL_STREAM):
    """Mean query accuracy over seeded episodes; degenerate ones are skipped and counted.

    Episode ``i`` uses seed ``(run_seed, stream, i)``, so the worker count does
    not change the result.
    """
    n_episodes = cfg.test_episodes if n_episodes is None else n_episodes
    snapshot = model.copy()

    def one(i):
        return episode_accuracy(snapshot, _episode(corpus, labels, cfg, (run_seed, stream, i)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_episodes)))
    else:
        results = [one(i) for i in range(n_episodes)]
    accs = [a for a in results if a is not None]
    skipped = len(results) - len(accs)
    if skipped:
        log.info("evaluation skipped %d degenerate episodes", skipped)
    report = _report(accs, skipped)
    if report.warning:
        log.warning("evaluation: %s", report.warning)
    return report


def combine_reports(reports):
    """Pool per-seed reports: per_seed lists each seed's mean; CI over all pooled episodes."""
    accs = [a for r in reports for a in r.accuracies]
    per_seed = [r.mean_accuracy for r in reports]
    combined = _report(accs, sum(r.skipped_degenerate_episodes for r in reports), per_seed)
    if combined.n_episodes:
        combined.mean_accuracy = float(np.mean([r.mean_accuracy for r in reports if r.n_episodes]))
    return combined


def _val_accuracy(model, corpus, labels, cfg, run_seed):
    accs = []
    for i in range(cfg.val_episodes):
        acc = episode_accuracy(model, _episode(corpus, labels, cfg, (run_seed, VAL_STREAM, i)))
        if acc is not None:
            accs.append(acc)
    return float(np.mean(accs)) if accs else 0.0


def train(model, corpus, split, cfg, run_seed, on_epoch=None):
    """Episodic training with early stopping on validation accuracy.

    Returns the state from the best validation epoch and the list of per-epoch
    log records. ``model`` is updated in place during training.
    """
    if model.n_way != cfg.n_way:
        raise ConfigError(f"model has {model.n_way} references but cfg.n_way is {cfg.n_way}")
    state = TrainState(model)
    best = state.copy()
    history = []
    while state.epoch < cfg.max_epochs:
        state.epoch += 1
        losses, drrs, skipped = [], [], 0
        for i in range(cfg.episodes_per_epoch):
            ep = _episode(corpus, split.train, cfg, (run_seed, TRAIN_STREAM, state.epoch, i))
            try:
                out = model.forward(ep)
            except DegenerateTaskError as exc:
                skipped += 1
                log.info("epoch %d episode %d skipped: %s", state.epoch, i, exc)
                continue
            out.tape.backward(out.loss)
            losses.append(float(out.loss.value[0, 0]))
            drrs.append(model.head.lam * float(out.drr.value[0, 0]) if out.drr is not None else 0.0)
            adam_step(state, out.tape.grads(), cfg)
        if not losses:
            raise TrainingError(f"every training episode in epoch {state.epoch} was degenerate")
        val_acc = _val_accuracy(model, corpus, split.val, cfg, run_seed)
        if val_acc > state.best_val_acc:
            state.best_val_acc = val_acc
            state.best_epoch = state.epoch
            state.epochs_since_improvement = 0
            best = state.copy()
        else:
            state.epochs_since_improvement += 1
        record = {
            "epoch": state.epoch,
            "train_loss": float(np.mean(losses)),
            "drr": float(np.mean(drrs)) + 0.0,
            "val_acc": val_acc,
            "epochs_since_improvement": state.epochs_since_improvement,
            "skipped": skipped,
            "lambda": model.head.lam,
        }
        history.append(record)
        log.debug("epoch %s", record)
        if on_epoch is not None:
            on_epoch(record)
        if state.epochs_since_improvement >= cfg.patience_epochs:
            break
    best.epoch = state.epoch
    best.epochs_since_improvement = state.epochs_since_improvement
    return best, history


# ---------------------------------------------------------------- checkpoints

MAGIC = b"TARTCKPT"
VERSION = 1
_END = b"END\n"


def _state_tensors(state):
    model = state.model
    meta = {
        "meta.kind": KINDS.index(model.kind),
        "meta.distance": DISTANCES.index(model.head.distance),
        "meta.lambda": model.head.lam,
        "meta.eps": model.head.eps,
        "meta.step": state.step,
        "meta.epoch": state.epoch,
        "meta.best_val_acc": state.best_val_acc,
        "meta.best_epoch": state.best_epoch,
        "meta.epochs_since_improvement": state.epochs_since_improvement,
    }
    tensors = [(k, np.array([[float(v)]])) for k, v in meta.items()]
    # reference is stored for proto models too so n_way survives the round trip
    params = {"projection": model.encoder.projection, "bias": model.encoder.bias, "reference": model.reference}
    params.update(model.parameters())
    for name in sorted(params):
        tensors.append((f"param.{name}", params[name]))
    for name in sorted(state.m):
        tensors.append((f"adam_m.{name}", state.m[name]))
        tensors.append((f"adam_v.{name}", state.v[name]))
    return tensors


def save_checkpoint(state, path):
    """Write ``TARTCKPT 1\\n``, then per tensor ``name rows cols\\n`` + little-endian f64 data, then ``END\\n``."""
    chunks = [MAGIC + b" %d\n" % VERSION]
    for name, arr in _state_tensors(state):
        arr = np.asarray(arr, dtype=np.float64)
        rows, cols = arr.shape
        chunks.append(f"{name} {rows} {cols}\n".encode("ascii"))
        chunks.append(arr.astype("<f8").tobytes(order="C"))
    chunks.append(_END)
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_checkpoint_tensors(path):
    with open(path, "rb") as fh:
        data = fh.read()
    pos = data.find(b"\n")
    if pos < 0:
        raise CheckpointError(f"{path}: missing header")
    header = data[:pos].split(b" ")
    if len(header) != 2 or header[0] != MAGIC:
        raise CheckpointError(f"{path}: not a TART checkpoint")
    try:
        version = int(header[1])
    except ValueError:
        raise CheckpointError(f"{path}: bad version field") from None
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos += 1
    tensors = {}
    while True:
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise CheckpointError(f"{path}: truncated (no END marker)")
        line = data[pos:nl]
        pos = nl + 1
        if line == _END.strip():
            if pos != len(data):
                raise CheckpointError(f"{path}: trailing bytes after END")
            return tensors
        parts = line.split(b" ")
        try:
            name = parts[0].decode("ascii")
            rows, cols = int(parts[1]), int(parts[2])
        except (IndexError, ValueError, UnicodeDecodeError):
            raise CheckpointError(f"{path}: corrupt tensor header {line[:60]!r}") from None
        if len(parts) != 3 or rows < 0 or cols < 0:
            raise CheckpointError(f"{path}: corrupt tensor header {line[:60]!r}")
        size = rows * cols * 8
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated inside tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos).astype(np.float64)
        tensors[name] = arr.reshape(rows, cols)
        pos += size


def load_checkpoint(path, table=None, vocab=None):
    """Rebuild a TrainState; a frozen embedding table must be supplied for text models."""
    t = read_checkpoint_tensors(path)

    def scalar(name):
        try:
            return float(t[name][0, 0])
        except (KeyError, IndexError):
            raise CheckpointError(f"{path}: missing {name}") from None

    try:
        projection, bias, reference = t["param.projection"], t["param.bias"], t["param.reference"]
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing tensor {exc.args[0]}") from None
    if "param.embeddings" in t:
        table = EmbeddingTable(t["param.embeddings"].copy(), trainable=True)
    elif table is not None and table.trainable:
        raise CheckpointError(f"{path}: checkpoint has no trained embeddings")
    try:
        head = HeadConfig(DISTANCES[int(scalar("meta.distance"))], scalar("meta.lambda"), scalar("meta.eps"))
        kind = KINDS[int(scalar("meta.kind"))]
        model = TartModel(MeanAffineEncoder(projection.copy(), bias.copy(), table, vocab), reference.copy(), head, kind)
    except (IndexError, ConfigError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {exc}") from None
    m = {k[len("adam_m."):]: a.copy() for k, a in t.items() if k.startswith("adam_m.")}
    v = {k[len("adam_v."):]: a.copy() for k, a in t.items() if k.startswith("adam_v.")}
    # a state that has never stepped carries no moments
    if (m and set(m) != set(model.parameters())) or set(v) != set(m):
        raise CheckpointError(f"{path}: optimizer moments do not match parameters")
    return TrainState(
        model, m, v,
        step=int(scalar("meta.step")),
        epoch=int(scalar("meta.epoch")),
        best_val_acc=scalar("meta.best_val_acc"),
        best_epoch=int(scalar("meta.best_epoch")),
        epochs_since_improvement=int(scalar("meta.epochs_since_improvement")),
    )
