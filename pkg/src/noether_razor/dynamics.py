"""Ground-truth Hamiltonian systems, RK4 reference integration and datasets.

Phase-space vectors are laid out as ``x = (q, p)``. For the n-body system the
position block is body-major: ``q = (q_1x, q_1y, q_2x, q_2y, ...)`` and the
momentum block follows the same order.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .exceptions import DivergenceError, PreconditionError, ShapeError

SCHEMA_VERSION = "1"
MAX_INTERNAL_STEP = 0.01
SYSTEM_KINDS = ("sho", "nharm", "nbody")


@dataclass(frozen=True)
class SystemSpec:
    kind: str = "sho"
    n: int = 1
    d: int = 2
    masses: tuple | None = None
    k: float = 1.0
    G: float = 1.0
    eps: float = 0.1
    potential: str = "attractive"

    def __post_init__(self):
        if self.kind not in SYSTEM_KINDS:
            raise PreconditionError(f"unknown system kind {self.kind!r}")
        if self.n < 1 or self.d < 1:
            raise PreconditionError("n and d must be at least 1")
        if self.eps <= 0:
            raise PreconditionError("softening eps must be positive")
        if self.potential not in ("attractive", "paper-verbatim"):
            raise PreconditionError(f"unknown potential sign {self.potential!r}")
        if self.masses is not None:
            m = tuple(float(v) for v in self.masses)
            if len(m) != self.n_bodies or min(m) <= 0:
                raise PreconditionError("need one positive mass per particle")
            object.__setattr__(self, "masses", m)

    @property
    def n_bodies(self):
        return 1 if self.kind == "sho" else self.n

    @property
    def phase_dim(self):
        if self.kind == "sho":
            return 2
        if self.kind == "nharm":
            return 2 * self.n
        return 2 * self.n * self.d

    def mass_array(self):
        if self.masses is None:
            return np.ones(self.n_bodies)
        return np.asarray(self.masses, dtype=np.float64)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["masses"] = None if self.masses is None else list(self.masses)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("masses") is not None:
            data["masses"] = tuple(data["masses"])
        return cls(**data)


def symplectic_form(m):
    """``J = [[0, I], [-I, 0]]`` for phase dimension ``m``."""
    if m % 2:
        raise ShapeError(f"phase dimension must be even, got {m}")
    h = m // 2
    J = np.zeros((m, m))
    J[:h, h:] = np.eye(h)
    J[h:, :h] = -np.eye(h)
    return J


def _check_dim(spec, x):
    if x.shape[-1] != spec.phase_dim:
        raise ShapeError(f"{spec.kind} expects phase dimension {spec.phase_dim}, "
                         f"got {x.shape[-1]}")


def _sign(spec):
    return -1.0 if spec.potential == "attractive" else 1.0


def hamiltonian_node(spec, x):
    """Energy of each row of ``x`` as a graph Node (differentiable in ``x``)."""
    x = gc.as_node(x)
    _check_dim(spec, x)
    M = spec.phase_dim
    h = M // 2
    q, p = x[..., :h], x[..., h:]
    if spec.kind in ("sho", "nharm"):
        inv_m = 1.0 / spec.mass_array()
        return (p * p * (0.5 * inv_m)).sum(axis=-1) + (q * q).sum(axis=-1) * (0.5 * spec.k)
    n, d = spec.n, spec.d
    m = spec.mass_array()
    inv_m = np.repeat(1.0 / m, d)
    kinetic = (p * p * (0.5 * inv_m)).sum(axis=-1)
    qb = q.reshape(q.shape[:-1] + (n, d))
    potential = None
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            diff = qb[..., i, :] - qb[..., j, :]
            r = gc.sqrt((diff * diff).sum(axis=-1) + spec.eps ** 2)
            term = gc.div(_sign(spec) * spec.G * m[i] * m[j], r)
            potential = term if potential is None else potential + term
    return kinetic if potential is None else kinetic + potential


def ground_truth_hamiltonian(spec, x):
    """Energy ``H(x)``; ``x`` may be a single point or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    with gc.no_record():
        out = hamiltonian_node(spec, x).value
    return float(out) if out.ndim == 0 else out


def ground_truth_gradient(spec, x):
    """Closed-form ``grad_x H`` for a point or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    _check_dim(spec, x)
    h = spec.phase_dim // 2
    q, p = x[..., :h], x[..., h:]
    m = spec.mass_array()
    if spec.kind in ("sho", "nharm"):
        inv_m = 1.0 / m
        return np.concatenate([spec.k * q, p * inv_m], axis=-1)
    n, d = spec.n, spec.d
    qb = q.reshape(q.shape[:-1] + (n, d))
    diff = qb[..., :, None, :] - qb[..., None, :, :]
    r2 = (diff ** 2).sum(axis=-1) + spec.eps ** 2
    mm = m[:, None] * m[None, :]
    # d/dq_i of sum_{a != b} s G m_a m_b / r_ab; each unordered pair appears twice
    coef = -2.0 * _sign(spec) * spec.G * mm * r2 ** -1.5
    np.einsum("...ii->...i", coef)[...] = 0.0
    dq = (coef[..., None] * diff).sum(axis=-2).reshape(q.shape)
    dp = p / np.repeat(m, d)
    return np.concatenate([dq, dp], axis=-1)


def hamiltonian_vector_field(H, x):
    """``J grad H(x)`` for a scalar field ``H`` written in graph operations.

    ``H`` maps a Node of shape ``(..., M)`` to per-row values.
    """
    x = np.asarray(x, dtype=np.float64)
    xn = gc.leaf(x)
    g = gc.grad(gc.as_node(H(xn)).sum(), xn).value
    return g @ symplectic_form(x.shape[-1]).T


def poisson_bracket(O1, O2, x):
    """``{O1, O2}(x) = grad O1 . J grad O2``."""
    x = np.asarray(x, dtype=np.float64)
    x1 = gc.leaf(x)
    g1 = gc.grad(gc.as_node(O1(x1)).sum(), x1).value
    x2 = gc.leaf(x)
    g2 = gc.grad(gc.as_node(O2(x2)).sum(), x2).value
    J = symplectic_form(x.shape[-1])
    out = np.einsum("...i,...i->...", g1, g2 @ J.T)
    return float(out) if out.ndim == 0 else out


def rk4_simulate(spec, x0, dt, steps, substeps=None):
    """Classical RK4 on ``xdot = J grad H`` returning states at ``dt, 2dt, ...``.

    ``x0`` may be a single point (result shape ``(steps, M)``) or a batch
    ``(B, M)`` (result shape ``(steps, B, M)``).
    """
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    if steps < 1:
        raise PreconditionError("steps must be at least 1")
    if substeps is None:
        substeps = max(1, math.ceil(dt / MAX_INTERNAL_STEP - 1e-12))
    if substeps < 1:
        raise PreconditionError("substeps must be at least 1")
    x = np.array(x0, dtype=np.float64)
    _check_dim(spec, x)
    J = symplectic_form(spec.phase_dim)
    h = dt / substeps

    def f(y):
        return ground_truth_gradient(spec, y) @ J.T

    out = np.empty((steps,) + x.shape)
    for step in range(steps):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                k1 = f(x)
                k2 = f(x + 0.5 * h * k1)
                k3 = f(x + 0.5 * h * k2)
                k4 = f(x + h * k3)
                x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at step {step}", step=step)
        out[step] = x
    return out


# ---------------------------------------------------------------------------
# datasets

@dataclass(frozen=True)
class DataRecipe:
    n_traj: int
    points_per_traj: int
    dt: float
    init: str = "normal"
    position_std: float = 1.0
    shift_std: float = 3.0
    momentum_std: float = 1.0
    translate: tuple = ()
    substeps: int | None = None

    def __post_init__(self):
        if self.n_traj < 1 or self.points_per_traj < 2:
            raise PreconditionError("need at least one trajectory of two points")
        if self.dt <= 0:
            raise PreconditionError("dt must be positive")
        if self.init not in ("normal", "nbody"):
            raise PreconditionError(f"unknown init distribution {self.init!r}")

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["translate"] = list(self.translate)
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["translate"] = tuple(data.get("translate") or ())
        return cls(**data)


VARIANTS = ("train", "test", "moved", "wider")


def recipe_for(spec, variant="train"):
    """Data recipe for a system and split, following the experiment setup."""
    if variant not in VARIANTS:
        raise PreconditionError(f"unknown variant {variant!r}")
    if spec.kind == "sho":
        if variant == "train":
            return DataRecipe(7, 4, 0.2)
        if variant == "test":
            return DataRecipe(100, 21, 0.2)
        raise PreconditionError(f"variant {variant!r} is only defined for nbody")
    if spec.kind == "nharm":
        if variant == "train":
            return DataRecipe(200, 50, 0.3)
        if variant == "test":
            return DataRecipe(100, 50, 0.3)
        raise PreconditionError(f"variant {variant!r} is only defined for nbody")
    n_traj = 200 if variant == "train" else 100
    base = dict(n_traj=n_traj, points_per_traj=50, dt=0.3, init="nbody")
    if variant == "moved":
        base["translate"] = (5.0,) * spec.d
    if variant == "wider":
        base["position_std"] = 2.0
    return DataRecipe(**base)


@dataclass
class Dataset:
    x_t: np.ndarray
    x_tp: np.ndarray
    traj: np.ndarray
    dt: float
    system: SystemSpec
    recipe: DataRecipe | None = None
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_t = np.asarray(self.x_t, dtype=np.float64)
        self.x_tp = np.asarray(self.x_tp, dtype=np.float64)
        self.traj = np.asarray(self.traj, dtype=np.int64)
        if self.x_t.shape != self.x_tp.shape or self.x_t.ndim != 2:
            raise ShapeError("x_t and x_tp must be matching (N, M) arrays")
        if len(self.traj) != len(self.x_t):
            raise ShapeError("one trajectory index per pair is required")

    def __len__(self):
        return len(self.x_t)

    @property
    def phase_dim(self):
        return self.x_t.shape[1]

    def subset(self, mask_or_index):
        return Dataset(self.x_t[mask_or_index], self.x_tp[mask_or_index],
                       self.traj[mask_or_index], self.dt, self.system,
                       self.recipe, self.seed, dict(self.metadata))

    def to_json(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "system": self.system.to_dict(),
            "recipe": None if self.recipe is None else self.recipe.to_dict(),
            "seed": self.seed,
            "dt": self.dt,
            "metadata": self.metadata,
            "pairs": [{"traj": int(t), "x_t": a.tolist(), "x_tp": b.tolist()}
                      for t, a, b in zip(self.traj, self.x_t, self.x_tp)],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema {doc.get('schema_version')!r}")
        pairs = doc["pairs"]
        recipe = doc.get("recipe")
        return cls(
            x_t=np.array([p["x_t"] for p in pairs], dtype=np.float64),
            x_tp=np.array([p["x_tp"] for p in pairs], dtype=np.float64),
            traj=np.array([p["traj"] for p in pairs], dtype=np.int64),
            dt=float(doc["dt"]),
            system=SystemSpec.from_dict(doc["system"]),
            recipe=None if recipe is None else DataRecipe.from_dict(recipe),
            seed=doc.get("seed"),
            metadata=doc.get("metadata") or {},
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def _initial_condition(spec, recipe, rng):
    M = spec.phase_dim
    if recipe.init == "normal":
        x = rng.standard_normal(M)
    else:
        n, d = spec.n, spec.d
        shift = rng.normal(0.0, recipe.shift_std, size=d)
        q = rng.normal(0.0, recipe.position_std, size=(n, d)) + shift
        p = rng.normal(0.0, recipe.momentum_std, size=(n, d))
        x = np.concatenate([q.ravel(), p.ravel()])
    if recipe.translate:
        h = M // 2
        x[:h] += np.tile(np.asarray(recipe.translate, dtype=np.float64), h // len(recipe.translate))
    return x


def sample_dataset(spec, recipe, seed, max_retries=10):
    """Simulate ``recipe.n_traj`` trajectories and pair consecutive points.

    Each trajectory draws from its own child seed, so results do not depend
    on batching. A divergent trajectory is redrawn from a fresh child seed.
    """
    seqs = np.random.SeedSequence(seed).spawn(recipe.n_traj)
    x0 = np.stack([_initial_condition(spec, recipe, np.random.default_rng(s)) for s in seqs])
    steps = recipe.points_per_traj - 1
    traj = _simulate_rows(spec, x0, recipe, steps)
    attempts = np.zeros(recipe.n_traj, dtype=int)
    bad = ~np.all(np.isfinite(traj), axis=(0, 2))
    while bad.any():
        for i in np.flatnonzero(bad):
            attempts[i] += 1
            if attempts[i] > max_retries:
                raise DivergenceError(f"trajectory {i} diverged {max_retries} times")
            child = seqs[i].spawn(attempts[i])[-1]
            x0[i] = _initial_condition(spec, recipe, np.random.default_rng(child))
        idx = np.flatnonzero(bad)
        traj[:, idx] = _simulate_rows(spec, x0[idx], recipe, steps)
        bad = ~np.all(np.isfinite(traj), axis=(0, 2))
    states = np.concatenate([x0[None], traj], axis=0)  # (points, B, M)
    x_t = states[:-1].transpose(1, 0, 2).reshape(-1, spec.phase_dim)
    x_tp = states[1:].transpose(1, 0, 2).reshape(-1, spec.phase_dim)
    traj_idx = np.repeat(np.arange(recipe.n_traj), steps)
    meta = {"retries": int(attempts.sum())}
    if recipe.init == "nbody":
        meta["momentum_init"] = f"iid normal, std {recipe.momentum_std}"
    return Dataset(x_t, x_tp, traj_idx, recipe.dt, spec, recipe, seed, meta)


def _simulate_rows(spec, x0, recipe, steps):
    substeps = recipe.substeps or max(1, math.ceil(recipe.dt / MAX_INTERNAL_STEP - 1e-12))
    with np.errstate(all="ignore"):
        try:
            return rk4_simulate(spec, x0, recipe.dt, steps, substeps)
        except DivergenceError:
            pass
        # fall back to row-by-row so one bad row does not poison the batch
        out = np.full((steps,) + x0.shape, np.nan)
        for i, row in enumerate(x0):
            try:
                out[:, i] = rk4_simulate(spec, row, recipe.dt, steps, substeps)
            except DivergenceError:
                pass
        return out
