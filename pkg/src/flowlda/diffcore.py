"""Dense float64 matrices plus reverse-mode automatic differentiation.

The differentiation engine is a define-by-run tape: every operation returns a
new :class:`Node` whose ``parents`` record (parent node, vector-Jacobian
closure) pairs, and :func:`backward` walks the resulting acyclic graph once in
reverse topological order. Values are plain ``numpy`` float64 arrays (row-major
2-D matrices for parameters; batched intermediates may be any shape that numpy
broadcasting produces).

Only first-order derivatives are supported and everything runs single-threaded
within one graph, which keeps gradient accumulation order fixed and results
bitwise reproducible.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import (
    ContractError,
    DecompositionError,
    DimensionError,
    NumericError,
    SingularMatrixError,
)

__all__ = [
    "Node",
    "parameter",
    "constant",
    "as_node",
    "backward",
    "matmul",
    "transpose",
    "tanh",
    "exp",
    "log",
    "concat_cols",
    "gather_rows",
    "logdet",
    "logdet_triangular",
    "solve_symmetric",
    "eig_symmetric",
    "as_matrix",
]


def as_matrix(value, name="matrix"):
    """Coerce to a finite float64 2-D array (the package's matrix type)."""
    m = np.asarray(value, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


class Node:
    """One vertex of the computation graph.

    ``value`` is the forward result, ``grad`` is filled in by
    :func:`backward`, and ``parents`` holds ``(node, vjp)`` pairs where
    ``vjp(grad_out)`` returns this node's gradient contribution to that
    parent. Leaves created through :func:`parameter` carry
    ``requires_grad=True`` and are the keys of the map ``backward`` returns.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad")

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    def __repr__(self):
        kind = "param" if self.requires_grad else ("leaf" if not self.parents else "op")
        return f"Node({kind}, shape={self.value.shape})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean_all(self)


def parameter(value):
    """Create a trainable leaf. The value is copied and must be finite."""
    v = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericError("parameter initialized with non-finite entries")
    return Node(v, requires_grad=True)


def constant(value):
    """Create a non-trainable leaf."""
    return Node(np.asarray(value, dtype=np.float64))


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` to undo numpy broadcasting."""
    g = grad
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_node(a), as_node(b)
    value = a.value + b.value
    return Node(
        value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b):
    a, b = as_node(a), as_node(b)
    value = a.value - b.value
    return Node(
        value,
        parents=(
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def neg(a):
    a = as_node(a)
    return Node(-a.value, parents=((a, lambda g: -g),))


def mul(a, b):
    a, b = as_node(a), as_node(b)
    value = a.value * b.value
    av, bv = a.value, b.value
    return Node(
        value,
        parents=(
            (a, lambda g: _unbroadcast(g * bv, av.shape)),
            (b, lambda g: _unbroadcast(g * av, bv.shape)),
        ),
    )


def matmul(a, b):
    """Matrix product. Inputs are coerced to graph nodes; shapes must conform."""
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {a.value.shape} x {b.value.shape}"
        )
    av, bv = a.value, b.value
    return Node(
        av @ bv,
        parents=(
            (a, lambda g: g @ bv.T),
            (b, lambda g: av.T @ g),
        ),
    )


def transpose(a):
    a = as_node(a)
    return Node(a.value.T, parents=((a, lambda g: g.T),))


def tanh(a):
    a = as_node(a)
    out = np.tanh(a.value)
    return Node(out, parents=((a, lambda g: g * (1.0 - out * out)),))


def exp(a):
    a = as_node(a)
    out = np.exp(a.value)
    return Node(out, parents=((a, lambda g: g * out),))


def log(a):
    a = as_node(a)
    av = a.value
    return Node(np.log(av), parents=((a, lambda g: g / av),))


def getitem(a, key):
    """Basic (slice/integer) indexing. Each input element appears at most once
    in the output, so the adjoint is a plain scatter-add into a zero buffer."""
    a = as_node(a)
    value = a.value[key]
    shape = a.value.shape

    def vjp(g):
        buf = np.zeros(shape)
        buf[key] = g
        return buf

    return Node(value, parents=((a, vjp),))


def concat_cols(nodes):
    """Concatenate 2-D nodes along axis 1."""
    nodes = [as_node(n) for n in nodes]
    widths = [n.value.shape[1] for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=1)
    offsets = np.cumsum([0] + widths)
    parents = []
    for i, n in enumerate(nodes):
        lo, hi = offsets[i], offsets[i + 1]
        parents.append((n, lambda g, lo=lo, hi=hi: g[:, lo:hi]))
    return Node(value, parents=tuple(parents))


def gather_rows(a, index):
    """Row lookup ``a[index]`` for an integer index array; adjoint scatter-adds."""
    a = as_node(a)
    idx = np.asarray(index)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("gather_rows needs a 1-D integer index array")
    shape = a.value.shape

    def vjp(g):
        buf = np.zeros(shape)
        np.add.at(buf, idx, g)
        return buf

    return Node(a.value[idx], parents=((a, vjp),))


def reduce_sum(a, axis=None, keepdims=False):
    a = as_node(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)
    shape = a.value.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(np.float64, copy=True)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).astype(np.float64, copy=True)

    return Node(value, parents=((a, vjp),))


def mean_all(a):
    a = as_node(a)
    n = a.value.size
    value = a.value.mean()
    shape = a.value.shape

    def vjp(g):
        return np.broadcast_to(g / n, shape).astype(np.float64, copy=True)

    return Node(value, parents=((a, vjp),))


def logdet(a):
    """log|det A| of a square node; adjoint is ``g * inv(A).T``."""
    a = as_node(a)
    m = a.value
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"logdet expects a square matrix, got {m.shape}")
    sign, ld = np.linalg.slogdet(m)
    if sign == 0 or not np.isfinite(ld):
        raise SingularMatrixError("logdet of a singular matrix")

    def vjp(g):
        return np.asarray(g, dtype=np.float64) * np.linalg.inv(m).T

    return Node(ld, parents=((a, vjp),))


def backward(loss):
    """Run reverse-mode differentiation from a scalar loss node.

    Fills ``node.grad`` for every node reachable from ``loss`` and returns a
    mapping from each trainable leaf to its gradient array.
    """
    if not isinstance(loss, Node):
        raise ContractError("backward expects a Node")
    if loss.value.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.value.shape}")

    order = _topological_order(loss)
    for node in order:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    # order lists children before their parents, so each node's grad is
    # complete by the time it is propagated.
    for node in order:
        g = node.grad
        for parent, vjp in node.parents:
            parent.grad += vjp(g)
    return {n: n.grad for n in order if n.requires_grad and not n.parents}


def _topological_order(root):
    """Children-first order over the subgraph reachable from ``root``."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# -- plain (non-differentiable) linear algebra -------------------------------


def logdet_triangular(m):
    """log|det| of a triangular matrix: the sum of log|diagonal| entries."""
    m = as_matrix(m)
    r, c = m.shape
    if r != c:
        raise DimensionError(f"expected a square matrix, got {m.shape}")
    lower_zero = np.count_nonzero(np.tril(m, -1)) == 0
    upper_zero = np.count_nonzero(np.triu(m, 1)) == 0
    if not (lower_zero or upper_zero):
        raise ContractError("matrix is not triangular")
    d = np.diag(m)
    if np.any(d == 0.0):
        raise SingularMatrixError("triangular matrix has a zero diagonal entry")
    return float(np.sum(np.log(np.abs(d))))


def solve_symmetric(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky."""
    a = as_matrix(a, "a")
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"a must be square, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"b has {b.shape[0]} rows, expected {a.shape[0]}")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ContractError("a is not symmetric")
    try:
        factor = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as err:
        raise DecompositionError(f"Cholesky failed: {err}") from err
    except scipy.linalg.LinAlgError as err:  # pragma: no cover - alias on most builds
        raise DecompositionError(f"Cholesky failed: {err}") from err
    return scipy.linalg.cho_solve(factor, b)


def eig_symmetric(a):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors in columns, so
    ``a @ v[:, i] == w[i] * v[:, i]``.
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    if not np.allclose(a, a.T, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise ContractError("matrix is not symmetric")
    w, v = np.linalg.eigh(a)
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]
