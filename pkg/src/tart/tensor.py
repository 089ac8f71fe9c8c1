"""Dense float64 matrices with define-by-run reverse-mode differentiation.

Every value is a 2-D ``numpy`` array. A :class:`Tape` records :class:`Node`
objects in creation order, which is a valid topological order, so the
backward pass is a single reverse sweep.

    tape = Tape()
    w = tape.param("w", np.ones((2, 2)))
    loss = sum_all(mul(w, w))
    tape.backward(loss)
    w.grad  # 2 * w
"""

from __future__ import annotations

import warnings

import numpy as np
import scipy.linalg

from .errors import EmptyInputError, GradientStateError, NumericalError, ShapeError, SingularMatrixError

NORM_EPS = 1e-12
COND_LIMIT = 1e12


def as_matrix(data, name="matrix"):
    """Validate external input and return a fresh 2-D float64 array."""
    a = np.array(data, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D data, got {a.ndim}-D")
    if not np.all(np.isfinite(a)):
        raise NumericalError(f"{name}: non-finite entries")
    return a


class Node:
    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "tape", "name", "_backward")

    def __init__(self, value, tape, parents=(), op="leaf", backward=None, requires_grad=False, name=None):
        self.value = value
        self.grad = np.zeros_like(value)
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Creation-ordered record of one forward computation."""

    def __init__(self):
        self.nodes = []
        self.params = {}
        self._done = False

    def _record(self, node):
        self.nodes.append(node)
        return node

    def const(self, data, name=None):
        return self._record(Node(as_matrix(data, name or "const"), self, name=name))

    def param(self, name, data):
        """Leaf requiring gradients; one node per name per tape."""
        node = self.params.get(name)
        if node is not None:
            return node
        node = self._record(Node(as_matrix(data, name), self, requires_grad=True, name=name))
        self.params[name] = node
        return node

    def grads(self):
        return {name: node.grad for name, node in self.params.items()}

    def zero_grad(self):
        for node in self.nodes:
            node.grad[...] = 0.0
        self._done = False

    def backward(self, root):
        if root.tape is not self:
            raise ValueError("root does not belong to this tape")
        if root.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 root, got {root.value.shape}")
        if self._done:
            raise GradientStateError("backward already ran on this tape; call zero_grad() first")
        self._done = True
        if not root.requires_grad:
            return
        root.grad[...] = 1.0
        for node in reversed(self.nodes):
            if node.requires_grad and node._backward is not None:
                node._backward(node.grad)


def backward(tape, root):
    tape.backward(root)


def _tape_of(*nodes):
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


def _make(value, parents, op, rule):
    tape = _tape_of(*parents)
    needs = any(p.requires_grad for p in parents)
    return tape._record(Node(value, tape, parents, op, rule if needs else None, needs))


def _acc(node, g):
    if node.requires_grad:
        node.grad += g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    (m, n), (p, q) = a.shape, b.shape
    if (p in (1, m) and q in (1, n)) or (m in (1, p) and n in (1, q)):
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    _check_broadcast(a.value, b.value, "add")

    def rule(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, _unbroadcast(g, b.value.shape))

    return _make(a.value + b.value, (a, b), "add", rule)


def sub(a, b):
    _check_broadcast(a.value, b.value, "sub")

    def rule(g):
        _acc(a, _unbroadcast(g, a.value.shape))
        _acc(b, -_unbroadcast(g, b.value.shape))

    return _make(a.value - b.value, (a, b), "sub", rule)


def mul(a, b):
    """Elementwise (Hadamard) product with row/scalar broadcasting."""
    _check_broadcast(a.value, b.value, "mul")
    av, bv = a.value, b.value

    def rule(g):
        _acc(a, _unbroadcast(g * bv, av.shape))
        _acc(b, _unbroadcast(g * av, bv.shape))

    return _make(av * bv, (a, b), "mul", rule)


def scale(a, c):
    c = float(c)

    def rule(g):
        _acc(a, c * g)

    return _make(c * a.value, (a,), "scale", rule)


def exp(a):
    out_value = np.exp(a.value)

    def rule(g):
        _acc(a, g * out_value)

    return _make(out_value, (a,), "exp", rule)


def log(a):
    if np.any(a.value <= 0.0):
        raise NumericalError("log of a non-positive entry")
    av = a.value

    def rule(g):
        _acc(a, g / av)

    return _make(np.log(av), (a,), "log", rule)


def transpose(a):
    def rule(g):
        _acc(a, g.T)

    return _make(a.value.T.copy(), (a,), "transpose", rule)


def sum_all(a):
    def rule(g):
        _acc(a, np.full(a.value.shape, g[0, 0]))

    return _make(np.array([[a.value.sum()]]), (a,), "sum", rule)


def mean_all(a):
    return scale(sum_all(a), 1.0 / a.value.size)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value

    def rule(g):
        _acc(a, g @ bv.T)
        _acc(b, av.T @ g)

    return _make(av @ bv, (a, b), "matmul", rule)


def lu_inverse(a):
    """Inverse via LU with partial pivoting; raises when the pivot ratio exceeds COND_LIMIT."""
    n, m = a.shape
    if n != m:
        raise ShapeError(f"inverse: matrix is {a.shape}, not square")
    if n == 0:
        raise EmptyInputError("inverse of an empty matrix")
    with warnings.catch_warnings():
        # exact singularity is reported below through the pivot check
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(a, check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() == 0.0 or pivots.max() / pivots.min() > COND_LIMIT:
        smallest = pivots.min()
        ratio = np.inf if smallest == 0.0 else pivots.max() / smallest
        raise SingularMatrixError(f"matrix is singular or ill-conditioned (pivot ratio {ratio:.3g})")
    return scipy.linalg.lu_solve((lu, piv), np.eye(n))


def inverse_backward(ainv, g):
    return -ainv.T @ g @ ainv.T


def inverse(a):
    ainv = lu_inverse(a.value)

    def rule(g):
        _acc(a, inverse_backward(ainv, g))

    return _make(ainv, (a,), "inverse", rule)


# ---------------------------------------------------------------- row-wise ops


def row_normalize(a, eps=NORM_EPS):
    """Divide each row by max(||row||, eps); zero rows stay zero."""
    av = a.value
    norms = np.sqrt(np.einsum("ij,ij->i", av, av))[:, None]
    active = norms > eps
    denom = np.where(active, norms, eps)
    y = av / denom

    def rule(g):
        radial = np.einsum("ij,ij->i", g, y)[:, None]
        _acc(a, np.where(active, (g - y * radial) / denom, g / eps))

    return _make(y, (a,), "row_normalize", rule)


def mean_rows(a):
    m = a.value.shape[0]
    if m == 0:
        raise EmptyInputError("mean_rows of zero rows")

    def rule(g):
        _acc(a, np.repeat(g / m, m, axis=0))

    return _make(a.value.mean(axis=0, keepdims=True), (a,), "mean_rows", rule)


def concat_rows(nodes):
    nodes = list(nodes)
    if not nodes:
        raise EmptyInputError("concat_rows of no nodes")
    cols = {n.value.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [n.value.shape[0] for n in nodes])

    def rule(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _acc(n, g[lo:hi])

    return _make(np.vstack([n.value for n in nodes]), tuple(nodes), "concat_rows", rule)


def take_rows(a, index):
    index = np.asarray(index, dtype=np.intp)

    def rule(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        _acc(a, full)

    return _make(a.value[index], (a,), "take_rows", rule)


def pick(a, index):
    """Select ``a[i, index[i]]`` for each row, giving an m x 1 column."""
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.value.shape[0])
    if index.shape != rows.shape:
        raise ShapeError("pick: one index per row required")

    def rule(g):
        full = np.zeros_like(a.value)
        full[rows, index] = g[:, 0]
        _acc(a, full)

    return _make(a.value[rows, index][:, None], (a,), "pick", rule)


def logsumexp_rows(a):
    av = a.value
    top = av.max(axis=1, keepdims=True)
    shifted = np.exp(av - top)
    total = shifted.sum(axis=1, keepdims=True)
    soft = shifted / total

    def rule(g):
        _acc(a, g * soft)

    return _make(top + np.log(total), (a,), "logsumexp_rows", rule)


def gather_mean(table, index_lists):
    """Row i of the output is the mean of ``table`` rows listed in ``index_lists[i]``."""
    index_lists = [np.asarray(ix, dtype=np.intp) for ix in index_lists]
    if any(ix.size == 0 for ix in index_lists):
        raise EmptyInputError("gather_mean: empty index list")
    tv = table.value
    out = np.vstack([tv[ix].mean(axis=0) for ix in index_lists])

    def rule(g):
        full = np.zeros_like(tv)
        for i, ix in enumerate(index_lists):
            np.add.at(full, ix, np.broadcast_to(g[i] / ix.size, (ix.size, tv.shape[1])))
        _acc(table, full)

    return _make(out, (table,), "gather_mean", rule)


# ---------------------------------------------------------------- distances


def cosine_distance(a, b, eps=1e-8):
    """Pairwise ``1 - <a_i, b_j> / max(||a_i|| ||b_j||, eps)``, shape (rows(a), rows(b))."""
    if a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"cosine_distance: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    na = np.sqrt(np.einsum("ij,ij->i", av, av))
    nb = np.sqrt(np.einsum("ij,ij->i", bv, bv))
    dots = av @ bv.T
    prod = np.outer(na, nb)
    active = prod > eps
    denom = np.where(active, prod, eps)
    cos = dots / denom

    def rule(g):
        h = g / denom
        w = np.where(active, g * cos, 0.0)
        inv_na2 = np.divide(1.0, na**2, out=np.zeros_like(na), where=na > 0)
        inv_nb2 = np.divide(1.0, nb**2, out=np.zeros_like(nb), where=nb > 0)
        _acc(a, -(h @ bv - w.sum(axis=1)[:, None] * av * inv_na2[:, None]))
        _acc(b, -(h.T @ av - w.sum(axis=0)[:, None] * bv * inv_nb2[:, None]))

    return _make(1.0 - cos, (a, b), "cosine_distance", rule)


def sq_euclidean_distance(a, b):
    """Pairwise ``||a_i - b_j||^2``."""
    if a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"sq_euclidean_distance: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    diff = av[:, None, :] - bv[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)

    def rule(g):
        weighted = 2.0 * g[:, :, None] * diff
        _acc(a, weighted.sum(axis=1))
        _acc(b, -weighted.sum(axis=0))

    return _make(d, (a, b), "sq_euclidean_distance", rule)
