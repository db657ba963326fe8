"""Identify learned symmetries: SVD of stacked generators and parallelness.

Learned generators are compared with the ground-truth generators of a system
only up to linear combinations, so everything here is a statement about the
row space of the stacked ``(M+1)^2``-dimensional generator vectors.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .conserved import QuadraticObservable, SymmetryBank, generator
from .exceptions import PreconditionError, ShapeError

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
DEFAULT_THRESHOLD = 0.05
RANK_TOL = 1e-10
NORMALIZATIONS = ("max", "row")


def _quadratic(m, pairs, linear=None):
    """Observable whose quadratic part is ``sum c x_a x_b`` over ``(a, b, c)``."""
    C = np.zeros((m, m))
    for a, b, c in pairs:
        C[a, b] += c
    b_vec = np.zeros(m)
    for a, c in (linear or []):
        b_vec[a] += c
    return QuadraticObservable(C + C.T, b_vec)


def ground_truth_quantities(spec):
    """Labelled generating set of quadratic conserved quantities of ``spec``.

    Returns a list of QuadraticObservable with a ``label`` attribute attached.
    """
    m = spec.phase_dim
    h = m // 2
    out = []

    def add(label, obs):
        obs.label = label
        out.append(obs)

    if spec.kind == "sho":
        mass = spec.mass_array()[0]
        add("H", _quadratic(m, [(0, 0, 0.5 * spec.k), (1, 1, 0.5 / mass)]))
        return out
    if spec.kind == "nharm":
        n = spec.n
        for i in range(n):
            add(f"H_{i + 1}", _quadratic(m, [(i, i, 0.5), (h + i, h + i, 0.5)]))
        for i in range(n):
            for j in range(i + 1, n):
                add(f"R_{i + 1}{j + 1}", _quadratic(m, [(i, h + j, 1.0), (j, h + i, -1.0)]))
        for i in range(n):
            for j in range(i + 1, n):
                add(f"F_{i + 1}{j + 1}", _quadratic(m, [(i, j, 1.0), (h + i, h + j, 1.0)]))
        return out
    if spec.kind != "nbody":
        raise PreconditionError(f"no ground-truth bank for system {spec.kind!r}")
    n, D = spec.n, spec.d
    mass = spec.mass_array()
    total = mass.sum()
    axes = "xyzw"

    def q(i, d):
        return i * D + d

    def p(i, d):
        return h + i * D + d

    def name(d):
        return axes[d] if D <= len(axes) else str(d + 1)

    for d in range(D):
        add(f"T_{name(d)}", _quadratic(m, [], [(p(i, d), 1.0) for i in range(n)]))
    for d in range(D):
        for e in range(d + 1, D):
            add(f"R^ABS_{name(d)}{name(e)}", _quadratic(
                m, [t for i in range(n) for t in ((q(i, d), p(i, e), 1.0), (q(i, e), p(i, d), -1.0))]))
    for d in range(D):
        for e in range(d + 1, D):
            terms = []
            for i in range(n):
                for j in range(n):
                    # momentum side uses sum(p)/n: equal to the mass-weighted
                    # mean for equal masses, and conserved for any masses
                    w = mass[i] / total / n
                    terms += [(q(i, d), p(j, e), w), (q(i, e), p(j, d), -w)]
            add(f"R^COM_{name(d)}{name(e)}", _quadratic(m, terms))
    for d in range(D):
        add(f"P_{name(d)}", _quadratic(m, [(p(i, d), p(j, d), 1.0) for i in range(n) for j in range(n)]))
    for d in range(D):
        for e in range(d + 1, D):
            add(f"Q_{name(d)}{name(e)}", _quadratic(
                m, [(p(i, d), p(j, e), 1.0) for i in range(n) for j in range(n)]))
    return out


def ground_truth_symmetry_bank(spec):
    return SymmetryBank.from_quantities(ground_truth_quantities(spec), trainable=False)


@dataclass
class GeneratorBank:
    rows: np.ndarray
    labels: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ShapeError("generator rows must form a matrix")
        side = int(round(np.sqrt(self.rows.shape[1])))
        if side * side != self.rows.shape[1]:
            raise ShapeError("generator rows must have length (M+1)^2")

    def __len__(self):
        return len(self.rows)


def ground_truth_bank(spec):
    """Flattened ground-truth generators with their labels."""
    qs = ground_truth_quantities(spec)
    return GeneratorBank(np.stack([generator(c).ravel() for c in qs]), [c.label for c in qs])


def stack_learned(bank, zero_tol=1e-12, normalize="max"):
    """Flattened, rescaled generators of a learned bank; zero rows dropped.

    ``normalize="max"`` divides every row by the largest row norm, so a
    quantity that training switched off keeps a small singular value.
    ``"row"`` scales each row to unit norm instead.
    """
    if normalize not in NORMALIZATIONS:
        raise PreconditionError(f"normalize must be one of {NORMALIZATIONS}")
    m = bank.phase_dim
    rows, labels, notes = [], [], []
    for k, c in enumerate(bank.quantities()):
        r = np.asarray(generator(c)).ravel()
        if np.linalg.norm(r) <= zero_tol:
            notes.append(f"quantity {k} has a zero generator and was dropped")
            continue
        rows.append(r)
        labels.append(f"C_{k + 1}")
    if not rows:
        return GeneratorBank(np.zeros((0, (m + 1) ** 2)), [], notes)
    rows = np.stack(rows)
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    rows = rows / (norms if normalize == "row" else norms.max())
    return GeneratorBank(rows, labels, notes)


def spectrum(g):
    """Descending singular values of the stacked generator matrix."""
    if len(g) == 0:
        raise PreconditionError("cannot take the spectrum of an empty bank")
    return gc.svd(g.rows)[1]


def _row_space_basis(rows, tol=RANK_TOL):
    u, s, v = gc.svd(rows)
    if len(s) == 0 or s[0] == 0:
        return np.zeros((rows.shape[1], 0)), 0
    rank = int(np.sum(s > tol * s[0]))
    if rank < len(rows):
        log.warning("ground-truth rows are rank deficient: rank %d of %d", rank, len(rows))
    return v[:, :rank], rank


def parallelness(g, truth, top=None):
    """Norm of the projection of each leading right singular vector onto ``truth``."""
    if len(g) == 0:
        return []
    _, _, v = gc.svd(g.rows)
    top = v.shape[1] if top is None else top
    if top > v.shape[1]:
        raise PreconditionError(f"only {v.shape[1]} singular vectors available, asked for {top}")
    basis, _ = _row_space_basis(truth.rows)
    proj = basis.T @ v[:, :top]
    return [float(x) for x in np.clip(np.linalg.norm(proj, axis=0), 0.0, 1.0)]


@dataclass
class AnalysisReport:
    singular_values: list
    parallelness: list
    active_count: int
    threshold: float
    ground_truth_dim: int
    ground_truth_labels: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "singular_values": self.singular_values,
                "parallelness": self.parallelness, "active_count": self.active_count,
                "threshold": self.threshold, "ground_truth_dim": self.ground_truth_dim,
                "ground_truth_labels": self.ground_truth_labels, "notes": self.notes,
                **self.extra}

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "singular_value", "parallelness"])
        for i, (s, p) in enumerate(zip(self.singular_values, self.parallelness)):
            w.writerow([i + 1, repr(float(s)), repr(float(p))])
        return buf.getvalue()

    def recovered(self, min_parallel):
        """Exactly ``L`` active values and the first ``L`` vectors all parallel."""
        L = self.ground_truth_dim
        return (self.active_count == L and len(self.parallelness) >= L
                and min(self.parallelness[:L]) > min_parallel)


def analyze(bank, spec, threshold=DEFAULT_THRESHOLD, normalize="max"):
    truth = ground_truth_bank(spec)
    notes = []
    if bank is None or bank.K == 0:
        return AnalysisReport([], [], 0, threshold, len(truth), truth.labels, ["no bank"],
                              {"normalize": normalize})
    g = stack_learned(bank, normalize=normalize)
    notes += g.notes
    if len(g) == 0:
        return AnalysisReport([], [], 0, threshold, len(truth), truth.labels,
                              notes + ["no bank"], {"normalize": normalize})
    sv = spectrum(g)
    par = parallelness(g, truth)
    return AnalysisReport([float(s) for s in sv], par, int(np.sum(sv > threshold)), threshold,
                          len(truth), truth.labels, notes, {"normalize": normalize})
