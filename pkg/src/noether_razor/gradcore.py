"""Dense float64 linear algebra and a small reverse-mode autodiff tape.

Values are numpy arrays. A :class:`Node` wraps a value together with the
operation that produced it. Every vector-Jacobian product is itself written
in terms of :class:`Node` operations, so a gradient obtained with
``create_graph=True`` (as :func:`grad` does) is a differentiable expression
and can be differentiated once more. This is all the nesting the Hamiltonian
likelihood needs: the loss contains ``grad_x H`` and we then want its
derivative with respect to the network weights and the symmetry parameters.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np

from .exceptions import DomainError, NumericError, ShapeError

__all__ = [
    "Node", "leaf", "constant", "as_node", "no_record", "grad", "gradients",
    "backward", "add", "sub", "mul", "div", "neg", "matmul", "sum_", "mean",
    "sum_to", "broadcast_to", "reshape", "swapaxes", "getitem", "concat",
    "exp", "log", "power", "sqrt", "elu", "where", "matexp", "svd",
]

_RECORD = [True]


@contextlib.contextmanager
def no_record():
    """Build values without recording parents (used by plain backward)."""
    prev = _RECORD[0]
    _RECORD[0] = False
    try:
        yield
    finally:
        _RECORD[0] = prev


class Node:
    __slots__ = ("value", "parents", "vjp", "requires_grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), vjp=None, requires_grad=False):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.requires_grad = requires_grad

    # array-like conveniences
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return swapaxes(self)

    def __repr__(self):
        tag = "leaf" if self.requires_grad and not self.parents else "node"
        return f"Node({tag}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _array(value):
    return np.asarray(value, dtype=np.float64)


def as_node(x):
    if isinstance(x, Node):
        return x
    return Node(_array(x))


def leaf(value):
    """A differentiable input."""
    return Node(np.array(value, dtype=np.float64), requires_grad=True)


def constant(value):
    return Node(_array(value))


def _make(value, parents, vjp):
    if _RECORD[0] and any(p.requires_grad for p in parents):
        return Node(value, parents, vjp, True)
    return Node(value)


# ---------------------------------------------------------------------------
# broadcasting helpers

def _reduce_to(value, shape):
    while value.ndim > len(shape):
        value = value.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and value.shape[i] != 1)
    if axes:
        value = value.sum(axis=axes, keepdims=True)
    return value


def sum_to(a, shape):
    a = as_node(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    src = a.shape

    def vjp(g, needs):
        return (broadcast_to(g, src),)

    return _make(_reduce_to(a.value, shape), (a,), vjp)


def broadcast_to(a, shape):
    a = as_node(a)
    shape = tuple(shape)
    if a.shape == shape:
        return a
    src = a.shape

    def vjp(g, needs):
        return (sum_to(g, src),)

    return _make(np.broadcast_to(a.value, shape).copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = as_node(a), as_node(b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(g, b.shape) if needs[1] else None)

    return _make(a.value + b.value, (a, b), vjp)


def sub(a, b):
    a, b = as_node(a), as_node(b)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None,
                sum_to(neg(g), b.shape) if needs[1] else None)

    return _make(a.value - b.value, (a, b), vjp)


def neg(a):
    a = as_node(a)
    return _make(-a.value, (a,), lambda g, needs: (neg(g),))


def mul(a, b):
    a, b = as_node(a), as_node(b)

    def vjp(g, needs):
        return (sum_to(mul(g, b), a.shape) if needs[0] else None,
                sum_to(mul(g, a), b.shape) if needs[1] else None)

    return _make(a.value * b.value, (a, b), vjp)


def div(a, b):
    a, b = as_node(a), as_node(b)
    out = _make(a.value / b.value, (a, b), None)

    def vjp(g, needs):
        ga = sum_to(div(g, b), a.shape) if needs[0] else None
        gb = sum_to(neg(mul(g, div(out, b))), b.shape) if needs[1] else None
        return ga, gb

    out.vjp = vjp
    return out


def exp(a):
    a = as_node(a)
    out = _make(np.exp(a.value), (a,), None)
    out.vjp = lambda g, needs: (mul(g, out),)
    return out


def log(a):
    a = as_node(a)
    return _make(np.log(a.value), (a,), lambda g, needs: (div(g, a),))


def power(a, p):
    """``a ** p`` for a constant scalar exponent."""
    a = as_node(a)
    p = float(p)
    if p == 1.0:
        return a

    def vjp(g, needs):
        return (mul(g, mul(p, power(a, p - 1.0))),)

    return _make(a.value ** p, (a,), vjp)


def sqrt(a):
    return power(a, 0.5)


def where(cond, a, b):
    """Select ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_node(a), as_node(b)

    def vjp(g, needs):
        zero = np.zeros(g.shape)
        return (sum_to(where(cond, g, zero), a.shape) if needs[0] else None,
                sum_to(where(cond, zero, g), b.shape) if needs[1] else None)

    return _make(np.where(cond, a.value, b.value), (a, b), vjp)


# ELU and its first two derivatives are primitives sharing one exp() and
# cached per activation: the inner and outer sweeps both ask for them.

def elu(a, alpha=1.0):
    a = as_node(a)
    v = a.value
    pos = v > 0
    e = np.exp(np.minimum(v, 0.0))
    cache = {}

    def cached(name, build):
        # a node built while recording serves both sweeps; a constant one
        # built during a plain backward must not leak into a recorded sweep
        node = cache.get((name, True))
        if node is None and not _RECORD[0]:
            node = cache.get((name, False))
        if node is None:
            node = build()
            cache[(name, _RECORD[0])] = node
        return node

    def d2():
        def build():
            node = _make(np.where(pos, 0.0, alpha * e), (a,), None)
            node.vjp = lambda g, needs: (mul(g, d2()),)
            return node
        return cached("d2", build)

    def d1():
        return cached("d1", lambda: _make(np.where(pos, 1.0, alpha * e), (a,),
                                          lambda g, needs: (mul(g, d2()),)))

    return _make(np.where(pos, v, alpha * (e - 1.0)), (a,),
                 lambda g, needs: (mul(g, d1()),))


# ---------------------------------------------------------------------------
# shape and linear algebra

def matmul(a, b):
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def vjp(g, needs):
        ga = sum_to(matmul(g, swapaxes(b)), a.shape) if needs[0] else None
        gb = sum_to(matmul(swapaxes(a), g), b.shape) if needs[1] else None
        return ga, gb

    return _make(a.value @ b.value, (a, b), vjp)


def swapaxes(a, ax1=-1, ax2=-2):
    a = as_node(a)
    return _make(np.swapaxes(a.value, ax1, ax2), (a,),
                 lambda g, needs: (swapaxes(g, ax1, ax2),))


def reshape(a, shape):
    a = as_node(a)
    src = a.shape
    return _make(a.value.reshape(shape), (a,),
                 lambda g, needs: (reshape(g, src),))


def sum_(a, axis=None, keepdims=False):
    a = as_node(a)
    src = a.shape

    def vjp(g, needs):
        if axis is None:
            g2 = reshape(g, (1,) * len(src))
        elif keepdims:
            g2 = g
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            axes = sorted(ax % len(src) for ax in axes)
            kshape = list(g.shape)
            for ax in axes:
                kshape.insert(ax, 1)
            g2 = reshape(g, tuple(kshape))
        return (broadcast_to(g2, src),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = as_node(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def getitem(a, index):
    a = as_node(a)
    src = a.shape

    def vjp(g, needs):
        return (_scatter(g, src, index),)

    return _make(a.value[index], (a,), vjp)


def _scatter(g, shape, index):
    """Adjoint of ``getitem``: place ``g`` into zeros of ``shape`` at ``index``."""
    g = as_node(g)
    out = np.zeros(shape)
    if _is_advanced(index):
        np.add.at(out, index, g.value)
    else:
        out[index] = g.value
    return _make(out, (g,), lambda h, needs: (getitem(h, index),))


def _is_advanced(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    sizes = [n.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)
    ndim = nodes[0].ndim
    ax = axis % ndim

    def vjp(g, needs):
        out = []
        for i, need in enumerate(needs):
            if not need:
                out.append(None)
                continue
            idx = [slice(None)] * ndim
            idx[ax] = slice(int(bounds[i]), int(bounds[i + 1]))
            out.append(getitem(g, tuple(idx)))
        return tuple(out)

    return _make(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes), vjp)


# ---------------------------------------------------------------------------
# reverse sweep

def _topo(output):
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(output, wrt, seed=None, create_graph=False):
    """Vector-Jacobian products of ``output`` with respect to each of ``wrt``.

    Only nodes lying on a path between a target and ``output`` are visited.
    Returns a list of Nodes (zero-valued constants for unreachable targets).
    """
    output = as_node(output)
    targets = {id(w) for w in wrt}
    order = _topo(output)
    relevant = {}
    for node in order:
        relevant[id(node)] = id(node) in targets or any(
            relevant.get(id(p), False) for p in node.parents)

    ctx = contextlib.nullcontext() if create_graph else no_record()
    with ctx:
        if seed is None:
            seed = Node(np.ones(output.shape))
        grads = {id(output): as_node(seed)}
        for node in reversed(order):
            g = grads.pop(id(node), None) if id(node) not in targets else grads.get(id(node))
            if g is None or not node.parents or not relevant[id(node)]:
                continue
            needs = tuple(relevant.get(id(p), False) for p in node.parents)
            if not any(needs):
                continue
            for p, gp, need in zip(node.parents, node.vjp(g, needs), needs):
                if not need or gp is None:
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = gp if prev is None else add(prev, gp)
        out = []
        for w in wrt:
            g = grads.get(id(w))
            out.append(g if g is not None else Node(np.zeros(w.shape)))
    return out


def grad(f, x):
    """Gradient of scalar ``f`` with respect to ``x`` as a differentiable Node."""
    f = as_node(f)
    if f.size != 1:
        raise ShapeError(f"grad needs a scalar output, got shape {f.shape}")
    return gradients(f, [x], create_graph=True)[0]


def backward(f, wrt):
    """Plain numpy gradients of scalar ``f`` for each node in ``wrt``."""
    f = as_node(f)
    if f.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {f.shape}")
    return [g.value for g in gradients(f, wrt)]


# ---------------------------------------------------------------------------
# matrix functions

_EXPM_TARGET_NORM = 0.5


def _taylor_degree(norm, tol=1e-18):
    q, term = 0, 1.0
    while True:
        q += 1
        term *= norm / q
        if term * norm / (q + 1) <= tol or q >= 30:
            return q


def matexp(m):
    """Matrix exponential of a square (or batch of square) matrices.

    Scaling and squaring around a Horner-form Taylor polynomial; every step is
    a graph operation, so gradients flow through to ``m``.
    """
    m = as_node(m)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ShapeError(f"matexp needs square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m.value)):
        raise DomainError("matexp input has non-finite entries")
    n = m.shape[-1]
    norm = float(np.max(np.sum(np.abs(m.value), axis=-2))) if m.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / _EXPM_TARGET_NORM)))) if norm > 0 else 0
    x = mul(m, 2.0 ** -s) if s else m
    eye = np.broadcast_to(np.eye(n), m.shape)
    q = _taylor_degree(min(norm, _EXPM_TARGET_NORM))
    r = constant(eye)
    for k in range(q, 0, -1):
        r = add(eye, mul(matmul(x, r), 1.0 / k))
    for _ in range(s):
        r = matmul(r, r)
    return r


def svd(m):
    """Thin SVD ``m = U diag(sigma) V^T`` with descending ``sigma``.

    Not differentiable. Raises :class:`NumericError` if LAPACK fails to
    converge.
    """
    a = np.asarray(m.value if isinstance(m, Node) else m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"svd needs a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("svd input has non-finite entries")
    try:
        u, sigma, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"svd did not converge for {a.shape} matrix "
                           f"with Frobenius norm {np.linalg.norm(a):.3e}") from exc
    return u, sigma, vt.T
