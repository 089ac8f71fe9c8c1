"""Central finite-difference checks for tape-built scalar functions."""

from __future__ import annotations

import numpy as np

from .tensor import Tape


def numeric_grad(fn, x, h=1e-5):
    """Central differences of scalar ``fn(x)`` w.r.t. every entry of ``x``; ``x`` is restored."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = fn(x)
        x[idx] = orig - h
        f_minus = fn(x)
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def rel_error(analytic, numeric, floor=1e-8):
    """Max-norm relative error between two gradient arrays."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build, params, h=1e-5):
    """Compare tape gradients of ``build(tape, nodes) -> 1x1 Node`` against finite differences.

    ``params`` maps names to arrays; they are perturbed in place and restored.
    Returns ``{name: relative error}``.
    """
    tape = Tape()
    nodes = {name: tape.param(name, value) for name, value in params.items()}
    tape.backward(build(tape, nodes))

    errors = {}
    for name, value in params.items():

        def fn(x, name=name):
            t = Tape()
            local = {k: t.param(k, x if k == name else v) for k, v in params.items()}
            return float(build(t, local).value[0, 0])

        numeric = numeric_grad(fn, value, h)
        errors[name] = rel_error(nodes[name].grad, numeric)
    return errors


def toy_episode(n_way=3, k_shot=2, q_queries=2, in_dim=6, seed=0):
    """Small vector-input episode with well-spread classes."""
    from .episodes import Episode, Example, make_rng

    rng = make_rng((seed, 11))
    centers = 2.0 * rng.standard_normal((n_way, in_dim))
    support, query, s_ids, q_ids = [], [], [], []
    for c in range(n_way):
        for _ in range(k_shot):
            support.append(Example(str(c), vector=centers[c] + 0.5 * rng.standard_normal(in_dim)))
            s_ids.append(c)
        for _ in range(q_queries):
            query.append(Example(str(c), vector=centers[c] + 0.5 * rng.standard_normal(in_dim)))
            q_ids.append(c)
    n_s, n_q = len(support), len(query)
    return Episode(n_way, k_shot, q_queries, support, np.array(s_ids), query, np.array(q_ids),
                   tuple(str(c) for c in range(n_way)), tuple(range(n_s)), tuple(range(n_s, n_s + n_q)))


def toy_model(n_way=3, in_dim=6, embed_dim=8, seed=0, head=None, kind="tart"):
    from .episodes import make_rng
    from .model import TartModel

    model = TartModel.create(n_way, in_dim, embed_dim, make_rng((seed, 12)), head, kind)
    model.encoder.bias[...] = 0.1 * make_rng((seed, 13)).standard_normal(model.encoder.bias.shape)
    return model


def check_total_loss(model, episode, h=1e-5):
    """Per-parameter-group relative error of the full episode loss gradient."""
    params = {name: arr.copy() for name, arr in model.parameters().items()}

    def build(tape, nodes):
        work = model.copy()
        for name, arr in work.parameters().items():
            arr[...] = nodes[name].value
        out = work.forward(episode, tape)
        return out.loss

    # forward() registers parameters under the same names, so the leaves created
    # here are the ones the loss depends on
    return check_gradients(build, params, h)
