"""Command-line entry point: train, eval, gradcheck, synth, export-embeddings."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import gradcheck
from .config import RunConfig, load_config
from .encoder import load_embeddings
from .episodes import load_corpus, load_split, make_rng, make_synthetic_corpus, sample_episode, synthetic_split, write_corpus, write_split
from .errors import ConfigError, DegenerateTaskError, TartError
from .head import compute_W, prototypes_from_batch
from .model import TartModel
from .tensor import Tape, matmul, take_rows
from .training import EVAL_STREAM, combine_reports, evaluate, load_checkpoint, save_checkpoint, train

log = logging.getLogger("tart")

GRADCHECK_TOL = 1e-4
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("TART_LOG", "error").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def _overrides(args):
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key] = value
    for key in ("seed", "lambda", "lr", "output_dir", "workers", "episodes"):
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            out["test_episodes" if key == "episodes" else key] = value
    return out


def _load_data(cfg):
    corpus = load_corpus(cfg.corpus)
    if not corpus.examples:
        raise ConfigError(f"corpus is empty: {cfg.corpus}")
    split = load_split(cfg.split)
    vocab = table = None
    if corpus.is_vector:
        in_dim = corpus.vector_dim
    else:
        if not cfg.embeddings:
            raise ConfigError("text corpus needs an 'embeddings' file")
        vocab, table = load_embeddings(cfg.embeddings, cfg.vocab_limit or None, cfg.trainable_embeddings)
        in_dim = table.dim
    return corpus, split, vocab, table, in_dim


def _checkpoint_path(cfg, seed):
    return os.path.join(cfg.output_dir, f"ckpt_seed{seed}.tart")


def cmd_train(args):
    cfg = load_config(args.config, _overrides(args)).validate()
    corpus, split, vocab, table, in_dim = _load_data(cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dump())
    tcfg = cfg.train_config()
    for seed in cfg.seeds:
        model = TartModel.create(cfg.n_way, in_dim, cfg.embed_dim, make_rng((seed, 0)), cfg.head_config(),
                                 cfg.head, table, vocab)
        log_path = os.path.join(cfg.output_dir, f"train_seed{seed}.log")
        with open(log_path, "w", encoding="utf-8") as fh:
            def emit(record):
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()

            state, history = train(model, corpus, split, tcfg, seed, on_epoch=emit)
        save_checkpoint(state, _checkpoint_path(cfg, seed))
        print(f"seed {seed}: {len(history)} epochs, best val acc {state.best_val_acc:.4f} "
              f"at epoch {state.best_epoch} -> {_checkpoint_path(cfg, seed)}")
    return 0


def _load_state(path, cfg, vocab, table):
    if not os.path.exists(path):
        raise ConfigError(f"checkpoint not found: {path}")
    state = load_checkpoint(path, table, vocab)
    if state.model.n_way != cfg.n_way:
        raise ConfigError(f"checkpoint is {state.model.n_way}-way but config asks for n_way={cfg.n_way}")
    return state


def cmd_eval(args):
    cfg = load_config(args.config, _overrides(args)).validate()
    corpus, split, vocab, table, _ = _load_data(cfg)
    checkpoints = args.checkpoint or [_checkpoint_path(cfg, s) for s in cfg.seeds]
    labels = split.labels(args.split)
    reports = []
    for i, path in enumerate(checkpoints):
        state = _load_state(path, cfg, vocab, table)
        run_seed = cfg.seeds[i] if i < len(cfg.seeds) else i
        reports.append(evaluate(state.model, corpus, labels, cfg.train_config(), cfg.test_episodes, run_seed,
                                workers=cfg.workers))
    report = combine_reports(reports) if len(reports) > 1 else reports[0]
    text = report.to_json()
    out = args.out or os.path.join(cfg.output_dir, "metrics.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(text)
    return 0


def cmd_gradcheck(args):
    cfg = load_config(args.config, _overrides(args)) if args.config else RunConfig()
    head = cfg.head_config()
    model = gradcheck.toy_model(head=head, seed=args.fixture_seed)
    episode = gradcheck.toy_episode(seed=args.fixture_seed)
    errors = gradcheck.check_total_loss(model, episode, h=args.h)
    for name in sorted(errors):
        print(f"{name:12s} max rel err {errors[name]:.3e}")
    worst = max(errors.values())
    ok = worst <= GRADCHECK_TOL
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    return 0 if ok else 1


def cmd_synth(args):
    corpus, meta = make_synthetic_corpus(
        args.n_classes, args.per_class, args.gap * args.noise, args.noise, args.dim, args.seed,
        cluster_size=args.cluster_size, cluster_radius=args.cluster_radius, separation=args.separation,
        isotropic_ratio=args.isotropic_ratio,
    )
    split = synthetic_split(meta)
    os.makedirs(args.out, exist_ok=True)
    write_corpus(corpus, os.path.join(args.out, "corpus.jsonl"))
    write_split(split, os.path.join(args.out, "split.json"))
    with open(os.path.join(args.out, "synth.json"), "w", encoding="utf-8") as fh:
        json.dump(meta.params, fh, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(corpus)} examples over {args.n_classes} classes to {args.out}")
    return 0


def cmd_export_embeddings(args):
    cfg = load_config(args.config, _overrides(args)).validate()
    corpus, split, vocab, table, _ = _load_data(cfg)
    state = _load_state(args.checkpoint, cfg, vocab, table)
    model = state.model
    labels = split.labels(args.split)
    ep = sample_episode(corpus, labels, cfg.n_way, cfg.k_shot, cfg.q_queries, (args.episode_seed, EVAL_STREAM, 0))
    tape = Tape()
    examples = ep.support + ep.query
    emb = model.encoder.encode_batch([ex.features for ex in examples], tape)
    if model.kind == "tart":
        support = take_rows(emb, np.arange(len(ep.support)))
        protos = prototypes_from_batch(support, ep.support_ids, model.n_way)
        try:
            W = compute_W(protos, tape.param("reference", model.reference))
        except DegenerateTaskError as exc:
            raise ConfigError(f"sampled episode is degenerate: {exc}") from exc
        coords = matmul(emb, W).value
    else:
        coords = emb.value
    with open(args.out, "w", encoding="utf-8") as fh:
        for ex, row in zip(examples, coords):
            fh.write("\t".join([ex.label] + [repr(float(v)) for v in row]) + "\n")
    print(f"wrote {len(examples)} rows x {coords.shape[1] + 1} columns to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="tart", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        sp.add_argument("--output-dir", dest="output_dir")

    t = sub.add_parser("train", help="episodic training, one run per seed")
    common(t)
    t.add_argument("--seed", help="comma-separated run seeds")
    t.add_argument("--lambda", dest="lambda", help="DRR weight")
    t.add_argument("--lr")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate checkpoints on held-out episodes")
    common(e)
    e.add_argument("--checkpoint", nargs="+")
    e.add_argument("--episodes", help="number of evaluation episodes (default 1000)")
    e.add_argument("--workers")
    e.add_argument("--seed", help="comma-separated run seeds matching the checkpoints")
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--out", help="metrics file (default OUTPUT_DIR/metrics.json)")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a 3-way 2-shot fixture")
    common(g, config_required=False)
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--fixture-seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("synth", help="write a synthetic pre-embedded dataset and split")
    s.add_argument("--out", required=True)
    s.add_argument("--n-classes", type=int, default=30)
    s.add_argument("--per-class", type=int, default=40)
    s.add_argument("--gap", type=float, default=1.0, help="clustered-class gap in units of noise")
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--cluster-size", type=int, default=3)
    s.add_argument("--cluster-radius", type=float, default=0.0)
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--isotropic-ratio", type=float, default=0.15)
    s.set_defaults(func=cmd_synth)

    x = sub.add_parser("export-embeddings", help="write transformed coordinates of one sampled episode as TSV")
    common(x)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--split", default="test", choices=("train", "val", "test"))
    x.add_argument("--episode-seed", type=int, default=0)
    x.set_defaults(func=cmd_export_embeddings)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TartError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
