import numpy as np
import pytest

from tart import tensor as T
from tart.errors import EmptyInputError, GradientStateError, NumericalError, ShapeError, SingularMatrixError
from tart.gradcheck import check_gradients, numeric_grad, rel_error
from tart.tensor import Tape

PRIMITIVE_TOL = 1e-6


def rng(seed=0):
    return np.random.default_rng(seed)


def weighted_sum(tape, node, seed=99):
    """Scalar root that exercises every entry with a distinct weight."""
    w = rng(seed).standard_normal(node.value.shape)
    return T.sum_all(T.mul(node, tape.const(w)))


# ---------------------------------------------------------------- construction


def test_as_matrix_promotes_and_validates():
    assert T.as_matrix(3.0).shape == (1, 1)
    assert T.as_matrix([1, 2, 3]).shape == (1, 3)
    with pytest.raises(NumericalError):
        T.as_matrix([[1.0, np.nan]])
    with pytest.raises(NumericalError):
        T.as_matrix([[np.inf]])
    with pytest.raises(ShapeError):
        T.as_matrix(np.zeros((2, 2, 2)))


def test_grad_starts_zero_with_value_shape():
    tape = Tape()
    p = tape.param("p", rng().standard_normal((3, 4)))
    assert p.grad.shape == p.value.shape
    assert not p.grad.any()


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    tape = Tape()
    m = rng().standard_normal((2, 3))
    out = T.matmul(tape.const(np.eye(2)), tape.const(m))
    np.testing.assert_array_equal(out.value, m)


def test_matmul_hand_arithmetic():
    tape = Tape()
    out = tape.const([[1.0, 2.0], [3.0, 4.0]]) @ tape.const([[1.0], [1.0]])
    np.testing.assert_array_equal(out.value, [[3.0], [7.0]])


def test_matmul_gradient_matches_finite_differences():
    r = rng(1)
    params = {"a": r.standard_normal((3, 4)), "b": r.standard_normal((4, 2))}
    errs = check_gradients(lambda t, n: weighted_sum(t, T.matmul(n["a"], n["b"])), params)
    assert max(errs.values()) <= PRIMITIVE_TOL


def test_matmul_shape_error():
    tape = Tape()
    with pytest.raises(ShapeError):
        T.matmul(tape.const(np.ones((2, 3))), tape.const(np.ones((2, 3))))


# ---------------------------------------------------------------- inverse


def test_inverse_identity():
    tape = Tape()
    np.testing.assert_array_equal(T.inverse(tape.const(np.eye(3))).value, np.eye(3))


def test_inverse_diagonal():
    tape = Tape()
    out = T.inverse(tape.const([[2.0, 0.0], [0.0, 4.0]]))
    np.testing.assert_allclose(out.value, [[0.5, 0.0], [0.0, 0.25]], rtol=0, atol=1e-15)


def well_conditioned(n, seed):
    q, _ = np.linalg.qr(rng(seed).standard_normal((n, n)))
    return q @ np.diag(np.linspace(1.0, 3.0, n)) @ q.T + 0.1 * rng(seed + 1).standard_normal((n, n))


def test_inverse_gradient_of_sum():
    params = {"a": well_conditioned(5, 3)}
    errs = check_gradients(lambda t, n: T.sum_all(T.inverse(n["a"])), params)
    assert errs["a"] <= PRIMITIVE_TOL


@pytest.mark.parametrize("seed", range(10))
def test_inverse_residual_for_moderate_condition(seed):
    # condition number 1e6 by construction
    r = rng(seed)
    u, _ = np.linalg.qr(r.standard_normal((6, 6)))
    v, _ = np.linalg.qr(r.standard_normal((6, 6)))
    a = u @ np.diag(np.logspace(0, -6, 6)) @ v.T
    assert np.linalg.cond(a) == pytest.approx(1e6, rel=1e-6)
    tape = Tape()
    ainv = T.inverse(tape.const(a)).value
    assert np.abs(a @ ainv - np.eye(6)).max() <= 1e-10


def test_inverse_singular_raises():
    tape = Tape()
    with pytest.raises(SingularMatrixError):
        T.inverse(tape.const([[1.0, 2.0], [2.0, 4.0]]))


def test_inverse_ill_conditioned_raises():
    tape = Tape()
    with pytest.raises(SingularMatrixError):
        T.inverse(tape.const(np.diag([1.0, 1e-14])))


def test_inverse_non_square_raises():
    tape = Tape()
    with pytest.raises(ShapeError):
        T.inverse(tape.const(np.ones((2, 3))))


# ---------------------------------------------------------------- row_normalize


def test_row_normalize_345():
    tape = Tape()
    np.testing.assert_allclose(T.row_normalize(tape.const([[3.0, 4.0]])).value, [[0.6, 0.8]], atol=1e-15)


def test_row_normalize_zero_row_stays_zero():
    tape = Tape()
    np.testing.assert_array_equal(T.row_normalize(tape.const([[0.0, 0.0]])).value, [[0.0, 0.0]])


def test_row_normalize_norms():
    tape = Tape()
    x = rng(4).standard_normal((4, 6))
    x[2] = 0.0
    norms = np.linalg.norm(T.row_normalize(tape.const(x)).value, axis=1)
    for n in norms:
        assert n == 0.0 or abs(n - 1.0) <= 1e-9


def test_row_normalize_gradient():
    params = {"a": rng(5).standard_normal((4, 6))}
    errs = check_gradients(lambda t, n: weighted_sum(t, T.row_normalize(n["a"])), params)
    assert errs["a"] <= PRIMITIVE_TOL


# ---------------------------------------------------------------- mean_rows


def test_mean_rows_single_row():
    tape = Tape()
    v = rng().standard_normal((1, 5))
    np.testing.assert_array_equal(T.mean_rows(tape.const(v)).value, v)


def test_mean_rows_symmetry():
    tape = Tape()
    np.testing.assert_array_equal(T.mean_rows(tape.const(np.eye(2))).value, [[0.5, 0.5]])


def test_mean_rows_summation_oracle():
    x = rng(6).standard_normal((7, 3))
    tape = Tape()
    got = T.mean_rows(tape.const(x)).value[0]
    oracle = [sum(x[i, j] for i in range(7)) / 7 for j in range(3)]
    np.testing.assert_allclose(got, oracle, rtol=0, atol=1e-12)


def test_mean_rows_gradient():
    params = {"a": rng(7).standard_normal((7, 3))}
    errs = check_gradients(lambda t, n: weighted_sum(t, T.mean_rows(n["a"])), params)
    assert errs["a"] <= PRIMITIVE_TOL


def test_mean_rows_empty():
    tape = Tape()
    with pytest.raises(EmptyInputError):
        T.mean_rows(tape.const(np.zeros((0, 3))))


def test_centering_identity():
    x = 10.0 * rng(8).standard_normal((9, 4))
    tape = Tape()
    node = tape.const(x)
    centered = T.sub(node, T.mean_rows(node))
    assert np.abs(centered.value.sum(axis=0)).max() <= 1e-12


# ---------------------------------------------------------------- elementwise and structural ops


def test_add_sub_scale_trivial():
    tape = Tape()
    a, b = tape.const([[1.0, 2.0]]), tape.const([[3.0, 5.0]])
    np.testing.assert_array_equal((a + b).value, [[4.0, 7.0]])
    np.testing.assert_array_equal((b - a).value, [[2.0, 3.0]])
    np.testing.assert_array_equal(T.scale(a, -2.0).value, [[-2.0, -4.0]])


def test_exp_log_transpose_trivial():
    tape = Tape()
    np.testing.assert_array_equal(T.exp(tape.const([[0.0]])).value, [[1.0]])
    np.testing.assert_array_equal(T.log(tape.const([[1.0]])).value, [[0.0]])
    np.testing.assert_array_equal(T.transpose(tape.const([[1.0, 2.0]])).value, [[1.0], [2.0]])


def test_log_rejects_nonpositive():
    tape = Tape()
    with pytest.raises(NumericalError):
        T.log(tape.const([[0.0]]))


OPS = {
    "add": (lambda t, n: T.add(n["a"], n["b"]), {"a": (3, 4), "b": (3, 4)}),
    "add_row_broadcast": (lambda t, n: T.add(n["a"], n["b"]), {"a": (3, 4), "b": (1, 4)}),
    "sub": (lambda t, n: T.sub(n["a"], n["b"]), {"a": (3, 4), "b": (3, 4)}),
    "mul": (lambda t, n: T.mul(n["a"], n["b"]), {"a": (3, 4), "b": (3, 4)}),
    "scale": (lambda t, n: T.scale(n["a"], -1.7), {"a": (3, 4)}),
    "exp": (lambda t, n: T.exp(n["a"]), {"a": (3, 4)}),
    "transpose": (lambda t, n: T.transpose(n["a"]), {"a": (3, 4)}),
    "logsumexp_rows": (lambda t, n: T.logsumexp_rows(n["a"]), {"a": (3, 4)}),
    "cosine_distance": (lambda t, n: T.cosine_distance(n["a"], n["b"]), {"a": (3, 4), "b": (2, 4)}),
    "sq_euclidean": (lambda t, n: T.sq_euclidean_distance(n["a"], n["b"]), {"a": (3, 4), "b": (2, 4)}),
    "concat_rows": (lambda t, n: T.concat_rows([n["a"], n["b"]]), {"a": (2, 4), "b": (3, 4)}),
    "take_rows": (lambda t, n: T.take_rows(n["a"], np.array([2, 0, 2])), {"a": (3, 4)}),
    "pick": (lambda t, n: T.pick(n["a"], np.array([1, 3, 0])), {"a": (3, 4)}),
    "gather_mean": (lambda t, n: T.gather_mean(n["a"], [[0, 1], [2], [1, 1, 2]]), {"a": (3, 4)}),
    "mean_all": (lambda t, n: T.mean_all(n["a"]), {"a": (3, 4)}),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_primitive_gradients(name):
    build, shapes = OPS[name]
    r = rng(sorted(OPS).index(name))
    params = {k: r.uniform(-3.0, 3.0, size=s) for k, s in shapes.items()}
    errs = check_gradients(lambda t, n: weighted_sum(t, build(t, n)), params)
    assert max(errs.values()) <= PRIMITIVE_TOL


def test_log_gradient():
    params = {"a": rng(11).uniform(0.5, 10.0, size=(3, 4))}
    errs = check_gradients(lambda t, n: weighted_sum(t, T.log(n["a"])), params)
    assert errs["a"] <= PRIMITIVE_TOL


def test_broadcast_shape_mismatch():
    tape = Tape()
    with pytest.raises(ShapeError):
        T.add(tape.const(np.ones((3, 4))), tape.const(np.ones((2, 4))))


# ---------------------------------------------------------------- backward


def test_backward_constant_root_leaves_zero_grads():
    tape = Tape()
    w = tape.param("w", rng().standard_normal((2, 2)))
    root = tape.const([[3.0]])
    tape.backward(root)
    assert not w.grad.any()


def test_backward_quadratic():
    tape = Tape()
    w0 = rng(2).standard_normal((3, 2))
    w = tape.param("w", w0)
    T.backward(tape, T.sum_all(T.mul(w, w)))
    np.testing.assert_allclose(w.grad, 2.0 * w0, rtol=0, atol=1e-15)


def test_backward_requires_scalar_root():
    tape = Tape()
    w = tape.param("w", np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tape.backward(T.mul(w, w))


def test_backward_twice_is_an_error():
    tape = Tape()
    w = tape.param("w", np.ones((2, 2)))
    root = T.sum_all(w)
    tape.backward(root)
    with pytest.raises(GradientStateError):
        tape.backward(root)
    tape.zero_grad()
    tape.backward(root)
    np.testing.assert_array_equal(w.grad, np.ones((2, 2)))


def test_backward_is_deterministic():
    def grads():
        tape = Tape()
        a = tape.param("a", well_conditioned(4, 5))
        b = tape.param("b", rng(6).standard_normal((4, 3)))
        root = T.sum_all(T.exp(T.scale(T.row_normalize(T.matmul(T.inverse(a), b)), 0.5)))
        tape.backward(root)
        return a.grad.copy(), b.grad.copy()

    (a1, b1), (a2, b2) = grads(), grads()
    assert a1.tobytes() == a2.tobytes() and b1.tobytes() == b2.tobytes()


def test_shared_node_accumulates():
    # y = a*a + a uses the leaf three times
    tape = Tape()
    a0 = rng(3).standard_normal((2, 3))
    a = tape.param("a", a0)
    tape.backward(T.sum_all(T.add(T.mul(a, a), a)))
    np.testing.assert_allclose(a.grad, 2 * a0 + 1, atol=1e-15)


def test_numeric_helpers():
    x = np.array([[1.0, -2.0]])
    g = numeric_grad(lambda v: float((v**2).sum()), x)
    np.testing.assert_allclose(g, [[2.0, -4.0]], atol=1e-8)
    assert rel_error(np.array([1.0]), np.array([1.0])) == 0.0
