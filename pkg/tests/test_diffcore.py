import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlda import diffcore as dc
from flowlda.errors import (
    ContractError,
    DecompositionError,
    DimensionError,
    SingularMatrixError,
)

from conftest import central_difference, max_relative_error


def triple_loop_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def cofactor_det(m):
    n = m.shape[0]
    if n == 1:
        return m[0, 0]
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += (-1.0) ** j * m[0, j] * cofactor_det(minor)
    return total


class TestMatmul:
    def test_identity(self, rng):
        a = rng.normal(size=(3, 3))
        assert np.array_equal(dc.matmul(np.eye(3), a).value, a)

    def test_hand_product(self):
        out = dc.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
        assert np.array_equal(out.value, [[3.0], [7.0]])

    def test_against_triple_loop(self, rng):
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        assert np.allclose(dc.matmul(a, b).value, triple_loop_matmul(a, b), atol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(DimensionError):
            dc.matmul(rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))

    def test_associativity(self, rng):
        for _ in range(20):
            a = rng.normal(size=(3, 4))
            b = rng.normal(size=(4, 2))
            c = rng.normal(size=(2, 5))
            left = dc.matmul(dc.matmul(a, b), c).value
            right = dc.matmul(a, dc.matmul(b, c)).value
            assert np.abs(left - right).max() < 1e-10


class TestBackward:
    def test_square(self):
        x = dc.parameter([[3.0]])
        grads = dc.backward((x * x).sum())
        assert grads[x] == pytest.approx(6.0)

    def test_constant_loss(self):
        x = dc.parameter([[2.0, 1.0]])
        loss = dc.constant([[5.0]]).sum() + 0.0 * x.sum()
        grads = dc.backward(loss)
        assert np.array_equal(grads[x], np.zeros((1, 2)))

    def test_non_scalar_loss_rejected(self, rng):
        x = dc.parameter(rng.normal(size=(2, 2)))
        with pytest.raises(ContractError):
            dc.backward(x + x)

    def test_two_layer_net_finite_difference(self, rng):
        w1 = dc.parameter(rng.normal(size=(4, 6)))
        b1 = dc.parameter(np.zeros((1, 6)))
        w2 = dc.parameter(rng.normal(size=(6, 3)))
        b2 = dc.parameter(rng.normal(size=(1, 3)))
        x = dc.constant(rng.normal(size=(9, 4)))
        target = dc.constant(rng.normal(size=(9, 3)))

        def loss_value():
            h = dc.tanh(dc.matmul(x, w1) + b1)
            out = dc.matmul(h, w2) + b2
            diff = out - target
            return float((diff * diff).mean().value)

        h = dc.tanh(dc.matmul(x, w1) + b1)
        out = dc.matmul(h, w2) + b2
        diff = out - target
        dc.backward((diff * diff).mean())
        for param in (w1, b1, w2, b2):
            numeric = central_difference(loss_value, param)
            assert max_relative_error(param.grad, numeric) < 1e-4

    def test_grad_reset_between_graphs(self, rng):
        x = dc.parameter([[2.0]])
        dc.backward((x * x).sum())
        first = x.grad.copy()
        dc.backward((x * x).sum())
        assert np.array_equal(x.grad, first)

    def test_shared_subexpression(self):
        x = dc.parameter([[2.0]])
        y = x * x          # used twice below
        loss = (y + y).sum()
        grads = dc.backward(loss)
        assert grads[x] == pytest.approx(8.0)


OPS = {
    "add": (2, lambda a, b: a + b),
    "sub": (2, lambda a, b: a - b),
    "mul": (2, lambda a, b: a * b),
    "matmul": (2, dc.matmul),
    "tanh": (1, dc.tanh),
    "exp": (1, dc.exp),
    "neg": (1, lambda a: -a),
    "transpose": (1, dc.transpose),
    "slice": (1, lambda a: a[:, 1:3]),
    "reverse": (1, lambda a: a[:, ::-1]),
    "sum_axis": (1, lambda a: a.sum(axis=1, keepdims=True)),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name, rng):
    arity, op = OPS[name]
    params = [dc.parameter(rng.normal(size=(5, 5)) * 0.5) for _ in range(arity)]

    def build():
        return (op(*params) * dc.constant(weights)).sum()

    weights = rng.normal(size=(5, 5))
    if name == "slice":
        weights = rng.normal(size=(5, 2))
    if name == "sum_axis":
        weights = rng.normal(size=(5, 1))
    loss = build()
    dc.backward(loss)
    for p in params:
        numeric = central_difference(lambda: float(build().value), p)
        assert max_relative_error(p.grad, numeric) < 1e-4


def test_log_gradient(rng):
    p = dc.parameter(rng.uniform(0.5, 2.0, size=(4, 4)))
    weights = rng.normal(size=(4, 4))

    def build():
        return (dc.log(p) * dc.constant(weights)).sum()

    dc.backward(build())
    numeric = central_difference(lambda: float(build().value), p)
    assert max_relative_error(p.grad, numeric) < 1e-4


def test_gather_rows_gradient(rng):
    table = dc.parameter(rng.normal(size=(4, 3)))
    idx = np.array([0, 2, 2, 1, 3, 0])
    weights = rng.normal(size=(6, 3))

    def build():
        return (dc.gather_rows(table, idx) * dc.constant(weights)).sum()

    dc.backward(build())
    numeric = central_difference(lambda: float(build().value), table)
    assert max_relative_error(table.grad, numeric) < 1e-4


def test_logdet_gradient(rng):
    m = dc.parameter(np.eye(4) + 0.2 * rng.normal(size=(4, 4)))

    def build():
        return dc.logdet(m)

    dc.backward(build())
    numeric = central_difference(lambda: float(build().value), m)
    assert max_relative_error(m.grad, numeric) < 1e-4


class TestLogdetTriangular:
    def test_identity(self):
        assert dc.logdet_triangular(np.eye(3)) == 0.0

    def test_log2_log_half_cancel(self):
        assert dc.logdet_triangular(np.diag([2.0, 0.5])) == pytest.approx(0.0)

    def test_matches_cofactor_expansion(self, rng):
        m = np.triu(rng.normal(size=(4, 4))) + np.eye(4)
        expected = np.log(abs(cofactor_det(m)))
        assert dc.logdet_triangular(m) == pytest.approx(expected, abs=1e-10)

    def test_zero_diagonal(self):
        with pytest.raises(SingularMatrixError):
            dc.logdet_triangular(np.diag([1.0, 0.0]))

    def test_not_triangular(self, rng):
        with pytest.raises(ContractError):
            dc.logdet_triangular(rng.normal(size=(3, 3)))


class TestSolveAndEig:
    def test_solve_identity(self, rng):
        b = rng.normal(size=(4, 2))
        assert np.allclose(dc.solve_symmetric(np.eye(4), b), b)

    def test_solve_residual(self, rng):
        a = rng.normal(size=(5, 5))
        spd = a @ a.T + 5.0 * np.eye(5)
        b = rng.normal(size=(5, 3))
        x = dc.solve_symmetric(spd, b)
        assert np.abs(spd @ x - b).max() < 1e-9

    def test_solve_rejects_non_spd(self):
        with pytest.raises(DecompositionError):
            dc.solve_symmetric(np.diag([1.0, -1.0]), np.ones((2, 1)))

    def test_eig_diagonal(self):
        w, v = dc.eig_symmetric(np.diag([3.0, 1.0]))
        assert np.allclose(w, [3.0, 1.0])
        assert abs(abs(v[0, 0]) - 1.0) < 1e-12 and abs(v[1, 0]) < 1e-12

    def test_eig_reconstruction(self, rng):
        for dim in (2, 5, 8):
            a = rng.normal(size=(dim, dim))
            a = 0.5 * (a + a.T)
            w, v = dc.eig_symmetric(a)
            assert np.abs(v @ np.diag(w) @ v.T - a).max() < 1e-8
            assert np.all(np.diff(w) <= 1e-12)

    def test_eig_pairs_satisfy_definition(self, rng):
        a = rng.normal(size=(6, 6))
        a = a @ a.T
        w, v = dc.eig_symmetric(a)
        for i in range(6):
            assert np.allclose(a @ v[:, i], w[i] * v[:, i], atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_scalar_chain(a, b):
    x = dc.parameter([[a]])
    y = dc.parameter([[b]])
    loss = (dc.tanh(x * y) + x).sum()
    grads = dc.backward(loss)
    sech2 = 1.0 - np.tanh(a * b) ** 2
    assert grads[x][0, 0] == pytest.approx(b * sech2 + 1.0, abs=1e-10)
    assert grads[y][0, 0] == pytest.approx(a * sech2, abs=1e-10)
