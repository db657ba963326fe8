"""Quadratic conserved quantities, their affine flows and orbit averaging.

A quadratic observable ``C(x) = x^T A x / 2 + b^T x`` generates the affine
vector field ``J A x + J b``. On homogeneous coordinates ``(x, 1)`` this is
the linear map ``g = [[J A, J b], [0, 0]]`` and its flow for time ``tau`` is
``expm(tau g)``.

Functions here accept plain arrays or graph Nodes. They return arrays when
every input is an array and Nodes otherwise, so the same code serves both
analysis and training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .dynamics import symplectic_form
from .exceptions import PreconditionError, ShapeError


def _is_node(*xs):
    return any(isinstance(x, gc.Node) for x in xs)


def _finish(node, *inputs):
    return node if _is_node(*inputs) else node.value


def _sym(A):
    if isinstance(A, gc.Node):
        return (A + gc.swapaxes(A)) * 0.5
    A = np.asarray(A, dtype=np.float64)
    return 0.5 * (A + np.swapaxes(A, -1, -2))


@dataclass
class QuadraticObservable:
    """``C(x) = x^T A x / 2 + b^T x`` with ``A`` kept symmetric."""

    A: object
    b: object

    def __post_init__(self):
        if not isinstance(self.b, gc.Node):
            self.b = np.asarray(self.b, dtype=np.float64)
        if not isinstance(self.A, gc.Node):
            self.A = np.asarray(self.A, dtype=np.float64)
        M = self.b.shape[-1]
        if self.b.ndim != 1 or tuple(self.A.shape) != (M, M):
            raise ShapeError(f"A must be {M}x{M} to match b")
        self.A = _sym(self.A)

    @property
    def phase_dim(self):
        return self.b.shape[-1]

    @classmethod
    def zeros(cls, m):
        return cls(np.zeros((m, m)), np.zeros(m))


def value(c, x):
    """``x^T A x / 2 + b^T x`` for a point or batch of rows."""
    xn = gc.as_node(x)
    if xn.shape[-1] != c.phase_dim:
        raise ShapeError(f"point dimension {xn.shape[-1]} != {c.phase_dim}")
    A, b = gc.as_node(c.A), gc.as_node(c.b)
    x2 = xn if xn.ndim > 1 else xn.reshape(1, -1)
    out = ((x2 @ A) * x2).sum(axis=-1) * 0.5 + (x2 * b).sum(axis=-1)
    if xn.ndim == 1:
        out = out.reshape(())
    return _finish(out, x, c.A, c.b)


def generator_node(A, b):
    """Stacked homogeneous generators ``(K, M+1, M+1)`` from ``A (K,M,M)``, ``b (K,M)``."""
    A, b = gc.as_node(A), gc.as_node(b)
    K, M = b.shape
    J = symplectic_form(M)
    top = gc.concat([gc.matmul(J, _sym(A)), gc.matmul(b, J.T).reshape(K, M, 1)], axis=-1)
    return gc.concat([top, np.zeros((K, 1, M + 1))], axis=-2)


def generator(c):
    """The ``(M+1) x (M+1)`` matrix ``[[J A, J b], [0, 0]]`` of ``c``."""
    M = c.phase_dim
    g = generator_node(gc.as_node(c.A).reshape(1, M, M), gc.as_node(c.b).reshape(1, M))
    return _finish(g.reshape(M + 1, M + 1), c.A, c.b)


def flow(c, tau, x):
    """``Phi^tau_C(x)``: first ``M`` entries of ``expm(tau g) (x, 1)``."""
    xn = gc.as_node(x)
    if xn.shape[-1] != c.phase_dim:
        raise ShapeError(f"point dimension {xn.shape[-1]} != {c.phase_dim}")
    M = c.phase_dim
    g = generator_node(gc.as_node(c.A).reshape(1, M, M), gc.as_node(c.b).reshape(1, M))
    E = gc.matexp(gc.mul(g.reshape(M + 1, M + 1), tau))
    lin, shift = E[:M, :M], E[:M, M]
    out = gc.matmul(xn if xn.ndim > 1 else xn.reshape(1, -1), gc.swapaxes(lin)) + shift
    if xn.ndim == 1:
        out = out.reshape(-1)
    return _finish(out, x, c.A, c.b, tau)


@dataclass
class SymmetryBank:
    """``K`` quadratic observables sharing phase dimension ``M``.

    ``A`` has shape ``(K, M, M)`` and ``b`` shape ``(K, M)``; either may be a
    graph Node while training.
    """

    A: object
    b: object
    trainable: bool = True

    def __post_init__(self):
        if not isinstance(self.A, gc.Node):
            self.A = np.asarray(self.A, dtype=np.float64)
        if not isinstance(self.b, gc.Node):
            self.b = np.asarray(self.b, dtype=np.float64)
        if self.b.ndim != 2 or self.A.shape != (self.b.shape[0], self.b.shape[1], self.b.shape[1]):
            raise ShapeError(f"bank shapes A{self.A.shape} and b{self.b.shape} are inconsistent")

    @property
    def K(self):
        return self.b.shape[0]

    @property
    def phase_dim(self):
        return self.b.shape[1]

    @classmethod
    def empty(cls, m):
        return cls(np.zeros((0, m, m)), np.zeros((0, m)), trainable=False)

    @classmethod
    def from_quantities(cls, quantities, trainable=True):
        qs = list(quantities)
        return cls(np.stack([np.asarray(q.A) for q in qs]),
                   np.stack([np.asarray(q.b) for q in qs]), trainable)

    @classmethod
    def random(cls, K, m, rng, std=0.01):
        A = rng.normal(0.0, std, size=(K, m, m))
        return cls(_sym(A), rng.normal(0.0, std, size=(K, m)), trainable=True)

    def quantities(self):
        return [QuadraticObservable(self.A[k], self.b[k]) for k in range(self.K)]

    def symmetric_A(self):
        return _sym(self.A)

    def to_dict(self):
        A = np.asarray(self.symmetric_A())
        iu = np.triu_indices(self.phase_dim)
        return {
            "phase_dim": self.phase_dim,
            "trainable": self.trainable,
            "quantities": [{"A": A[k][iu].tolist(), "b": np.asarray(self.b[k]).tolist()}
                           for k in range(self.K)],
        }

    @classmethod
    def from_dict(cls, data):
        m = int(data["phase_dim"])
        iu = np.triu_indices(m)
        qs = data["quantities"]
        A = np.zeros((len(qs), m, m))
        b = np.zeros((len(qs), m))
        for k, q in enumerate(qs):
            A[k][iu] = q["A"]
            A[k] = A[k] + np.triu(A[k], 1).T
            b[k] = q["b"]
        return cls(A, b, bool(data.get("trainable", True)))


def orbit_maps(bank, taus):
    """Affine maps ``(lin (S,M,M), shift (S,M))`` of the combined flows.

    Row ``s`` is ``Phi^{tau_s}`` with ``Phi^tau = Phi^1_{sum_i tau_i C_i}``.
    """
    taus = np.asarray(taus, dtype=np.float64)
    if taus.ndim != 2 or taus.shape[1] != bank.K:
        raise ShapeError(f"taus must be (S, {bank.K}), got {taus.shape}")
    M = bank.phase_dim
    G = generator_node(bank.A, bank.b).reshape(bank.K, (M + 1) ** 2)
    E = gc.matexp(gc.matmul(taus, G).reshape(len(taus), M + 1, M + 1))
    return E[:, :M, :M], E[:, :M, M]


def combined_flow(bank, tau, x):
    """``Phi^1_{sum_i tau_i C_i}(x)``; identity when the bank is empty."""
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    if len(tau) != bank.K:
        raise ShapeError(f"expected {bank.K} symmetry times, got {len(tau)}")
    if bank.K == 0:
        return x
    xn = gc.as_node(x)
    lin, shift = orbit_maps(bank, tau[None])
    x2 = xn if xn.ndim > 1 else xn.reshape(1, -1)
    out = gc.matmul(x2, gc.swapaxes(lin[0])) + shift[0]
    if xn.ndim == 1:
        out = out.reshape(-1)
    return _finish(out, x, bank.A, bank.b)


@dataclass(frozen=True)
class TauMeasure:
    """Distribution of symmetry times: ``normal`` (unit) or ``uniform(lo, hi)``."""

    kind: str = "normal"
    lo: float = 0.0
    hi: float = 2.0 * math.pi

    def __post_init__(self):
        if self.kind not in ("normal", "uniform"):
            raise PreconditionError(f"unknown tau measure {self.kind!r}")
        if self.kind == "uniform" and not self.lo < self.hi:
            raise PreconditionError("uniform measure needs lo < hi")

    @classmethod
    def parse(cls, text):
        """``"normal"``, ``"uniform"`` or ``"uniform(lo,hi)"``."""
        text = text.strip()
        if text.startswith("uniform(") and text.endswith(")"):
            lo, hi = (float(v) for v in text[8:-1].split(","))
            return cls("uniform", lo, hi)
        return cls(text)

    def __str__(self):
        return "normal" if self.kind == "normal" else f"uniform({self.lo!r},{self.hi!r})"


def sample_tau(measure, K, S, rng):
    """``S`` i.i.d. symmetry-time vectors in ``R^K``, shape ``(S, K)``."""
    if S < 1:
        raise PreconditionError("need at least one tau sample")
    if measure.kind == "normal":
        return rng.standard_normal((S, K))
    return rng.uniform(measure.lo, measure.hi, size=(S, K))


def symmetrize(h, bank, x, taus):
    """Monte Carlo orbit average ``(1/S) sum_s h(Phi^{tau_s}(x))``.

    ``h`` maps a Node of rows ``(..., M)`` to per-row values ``(...)``.
    Differentiable in ``x``, in anything ``h`` closes over, and in the bank.
    """
    xn = gc.as_node(x)
    if xn.shape[-1] != bank.phase_dim:
        raise ShapeError(f"point dimension {xn.shape[-1]} != {bank.phase_dim}")
    x2 = xn if xn.ndim > 1 else xn.reshape(1, -1)
    if bank.K == 0:
        out = gc.as_node(h(x2))
    else:
        lin, shift = orbit_maps(bank, taus)
        pts = gc.matmul(x2, gc.swapaxes(lin)) + shift[:, None, :]   # (S, B, M)
        out = gc.mean(gc.as_node(h(pts)), axis=0)
    if xn.ndim == 1:
        out = out.reshape(())
    return _finish(out, x, bank.A, bank.b)


def closure_residual(bank):
    """Largest relative part of a pairwise generator commutator outside the bank's span.

    Zero when the span of the quantities is closed under the Poisson bracket.
    """
    if bank.K < 2:
        return 0.0
    A = np.asarray(bank.A.value if isinstance(bank.A, gc.Node) else bank.A)
    b = np.asarray(bank.b.value if isinstance(bank.b, gc.Node) else bank.b)
    g = generator_node(A, b).value
    flat = g.reshape(bank.K, -1)
    worst = 0.0
    for i in range(bank.K):
        for j in range(i + 1, bank.K):
            com = (g[i] @ g[j] - g[j] @ g[i]).reshape(-1)
            size = np.linalg.norm(com)
            if size < 1e-300:
                continue
            coef = np.linalg.lstsq(flat.T, com, rcond=None)[0]
            worst = max(worst, float(np.linalg.norm(com - flat.T @ coef) / size))
    return worst
