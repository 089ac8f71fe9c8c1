"""Acceptance suite: one PASS/FAIL line per criterion, at the stated tolerances.

Run with ``pytest tests/test_acceptance.py -v`` or ``python3 tests/test_acceptance.py``.
"""

import json
import time

import numpy as np
import pytest

from tart import benchmark
from tart.episodes import ClassSplit, Corpus, Example, make_rng, sample_episode
from tart.errors import DegenerateTaskError
from tart.gradcheck import check_total_loss, toy_episode, toy_model
from tart.head import HeadConfig, PrototypeSet, compute_W
from tart.model import TartModel
from tart.tensor import Tape, row_normalize
from tart.training import TrainConfig, evaluate, load_checkpoint, save_checkpoint, train

SEEDS = tuple(range(10))


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        return ok

    return emit


# ---------------------------------------------------------------- exact solve


def test_exact_solve_invariant(report):
    start = time.process_time()
    rng = make_rng(2024)
    worst, solved = 0.0, 0
    while solved < 1000:
        tape = Tape()
        raw = tape.const(rng.standard_normal((5, 256)))
        ps = PrototypeSet(raw, row_normalize(raw))
        R = tape.const(rng.uniform(-1, 1, size=(5, 256)))
        try:
            W = compute_W(ps, R)
        except DegenerateTaskError:
            continue
        resid = np.linalg.norm(ps.norm.value @ W.value - row_normalize(R).value)
        worst = max(worst, resid)
        solved += 1
    elapsed = time.process_time() - start
    ok = report("exact-solve", worst <= 1e-8 and elapsed < 10.0,
                f"max ||P_norm W - R_norm||_F = {worst:.2e} over {solved} episodes (<= 1e-8), {elapsed:.2f}s CPU (< 10s)")
    assert ok


# ---------------------------------------------------------------- gradient


def test_gradient_acceptance(report):
    start = time.process_time()
    errors = check_total_loss(toy_model(), toy_episode())
    elapsed = time.process_time() - start
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(errors.items()))
    ok = report("gradient", max(errors.values()) <= 1e-4 and elapsed < 5.0,
                f"3-way 2-shot E=8 rel. err {detail} (<= 1e-4), {elapsed:.2f}s CPU (< 5s)")
    assert set(errors) == {"projection", "bias", "reference"}
    assert ok


# ---------------------------------------------------------------- published numbers


def test_published_numbers_caveat(report):
    # The published benchmark accuracies need the full corpora, pretrained word
    # vectors and a recurrent encoder; the property criteria in this file stand in.
    report("published-number caveat", True,
           "benchmark-table accuracies are not reproduced at desk scale; property criteria substituted")


# ---------------------------------------------------------------- separation and ablation


@pytest.fixture(scope="module")
def bench_runs():
    """Lazily trained accuracies per (kind, lambda), shared between criteria."""
    cache, timing = {}, {}

    def get(kind, lam):
        key = (kind, lam)
        if key not in cache:
            t0 = time.process_time()
            cache[key] = benchmark.run_many(SEEDS, kind, lam)
            timing[key] = time.process_time() - t0
        return cache[key]

    get.timing = timing
    return get


def test_separation_property(report, bench_runs):
    proto = bench_runs("proto", 0.0)
    tart = bench_runs("tart", 0.5)
    elapsed = bench_runs.timing[("proto", 0.0)] + bench_runs.timing[("tart", 0.5)]
    diff = tart - proto
    gain = 100 * diff.mean()
    positive = int((diff > 0).sum())
    in_band = 0.55 <= proto.mean() <= 0.75
    ok = report("separation", gain >= 5.0 and positive >= 8 and in_band and elapsed < 180.0,
                f"TART {100 * tart.mean():.2f}% vs PROTO {100 * proto.mean():.2f}% (band 55-75%): "
                f"+{gain:.2f}pp (>= 5), positive in {positive}/10 seeds (>= 8), {elapsed:.0f}s CPU (< 180s)")
    assert ok


def test_drr_ablation_direction(report, bench_runs):
    t5 = bench_runs("tart", 0.5)
    t0 = bench_runs("tart", 0.0)
    t9 = bench_runs("tart", 0.9)
    elapsed = sum(bench_runs.timing[("tart", lam)] for lam in (0.0, 0.5, 0.9))
    m5, m0, m9 = (100 * a.mean() for a in (t5, t0, t9))
    tol = 0.5
    ok = report("drr-ablation", m5 >= m0 - tol and m9 <= m5 + tol and elapsed < 360.0,
                f"lambda 0.5 {m5:.2f}% vs 0 {m0:.2f}% (>= within {tol}pt), 0.9 {m9:.2f}% (not above 0.5 "
                f"beyond {tol}pt), {elapsed:.0f}s CPU (< 360s)")
    assert ok


# ---------------------------------------------------------------- chance level


def test_chance_level(report):
    rng = make_rng(77)
    # features carry no label information
    examples = [Example(f"c{i % 20}", vector=rng.standard_normal(16)) for i in range(20 * 30)]
    corpus = Corpus(examples)
    labels = corpus.labels
    model = TartModel.create(5, 16, 32, make_rng(78), HeadConfig())
    rep = evaluate(model, corpus, labels, TrainConfig(), 1000, 5)
    ok = report("chance", abs(rep.mean_accuracy - 0.2) <= 0.04 and rep.n_episodes == 1000,
                f"untrained 5-way accuracy {rep.mean_accuracy:.4f} over {rep.n_episodes} episodes (0.20 +/- 0.04)")
    assert ok


# ---------------------------------------------------------------- determinism and checkpoints


def small_run(seed, tmp_path, tag):
    cfg = benchmark.BenchmarkConfig(epochs=2, episodes_per_epoch=30, val_episodes=10)
    corpus, split = benchmark.benchmark_data(seed, cfg)
    model = TartModel.create(5, cfg.dim, cfg.embed_dim, make_rng((seed, 7)), HeadConfig(), "tart")
    state, history = train(model, corpus, split, cfg.train_config(), seed)
    ckpt = tmp_path / f"{tag}.tart"
    save_checkpoint(state, ckpt)
    rep = evaluate(state.model, corpus, split.test, cfg.train_config(), 200, seed)
    return state, ckpt.read_bytes(), rep.to_json(), json.dumps(history), (corpus, split, cfg)


def test_determinism(report, tmp_path):
    a = small_run(3, tmp_path, "a")
    b = small_run(3, tmp_path, "b")
    same_run = a[1] == b[1] and a[2] == b[2] and a[3] == b[3]
    corpus, split, cfg = a[4]
    r1 = evaluate(a[0].model, corpus, split.test, cfg.train_config(), 1000, 11, workers=1).to_json()
    r4 = evaluate(a[0].model, corpus, split.test, cfg.train_config(), 1000, 11, workers=4).to_json()
    ok = report("determinism", same_run and r1 == r4,
                f"repeat run identical checkpoint/metrics/log: {same_run}; 1 vs 4 workers identical: {r1 == r4}")
    assert ok


def test_checkpoint_round_trip(report, tmp_path):
    state, _, _, _, (corpus, split, cfg) = small_run(4, tmp_path, "c")
    path = tmp_path / "rt.tart"
    save_checkpoint(state, path)
    before = evaluate(state.model, corpus, split.test, cfg.train_config(), 300, 2)
    after = evaluate(load_checkpoint(path).model, corpus, split.test, cfg.train_config(), 300, 2)
    same = before.accuracies == after.accuracies and before.to_json() == after.to_json()
    ok = report("checkpoint round-trip", same,
                f"300 episodes, bitwise-equal accuracies after save/load: {same}")
    assert ok


# ---------------------------------------------------------------- degeneracy


def twin_class_corpus():
    """Six training classes where t0 and t1 are exact copies, plus five ordinary validation classes."""
    rng = make_rng(5)
    base = rng.standard_normal(8)
    examples = []
    for name in [f"t{c}" for c in range(6)] + [f"v{c}" for c in range(5)]:
        center = base if name in ("t0", "t1") else 4 * rng.standard_normal(8)
        examples += [Example(name, vector=center * (1 + 0.1 * i)) for i in range(4)]
    return Corpus(examples), ClassSplit([f"t{c}" for c in range(6)], [f"v{c}" for c in range(5)], [])


def test_degeneracy_handling(report, caplog):
    corpus, split = twin_class_corpus()
    model = TartModel.create(5, 8, 8, make_rng(1), HeadConfig())
    cfg = TrainConfig(lr=1e-2, episodes_per_epoch=40, max_epochs=2, val_episodes=5, n_way=5, k_shot=1, q_queries=1)

    seed = 0
    ep = sample_episode(corpus, split.train, 5, 1, 1, seed)
    while not {"t0", "t1"} <= set(ep.original_labels):
        seed += 1
        ep = sample_episode(corpus, split.train, 5, 1, 1, seed)
    try:
        model.predict(ep)
        eval_error = None
    except DegenerateTaskError as exc:
        eval_error = exc
    raised = eval_error is not None and {ep.original_labels[c] for c in eval_error.classes} == {"t0", "t1"}

    rep = evaluate(model, corpus, split.train, cfg, 100, 0)
    eval_counted = rep.skipped_degenerate_episodes > 0 and np.isfinite(rep.mean_accuracy)

    caplog.set_level("INFO", logger="tart.training")
    state, history = train(model.copy(), corpus, split, cfg, 0)
    skipped = sum(r["skipped"] for r in history)
    logged = any("skipped" in r.message for r in caplog.records)
    finite = all(np.isfinite(r["train_loss"]) for r in history) and all(
        np.isfinite(p).all() for p in state.model.parameters().values())

    ok = report("degeneracy", raised and eval_counted and skipped > 0 and logged and finite,
                f"eval raises on twin classes: {raised}; evaluate skipped {rep.skipped_degenerate_episodes}/100; "
                f"training skipped {skipped} episodes (logged: {logged}); all losses and parameters finite: {finite}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
