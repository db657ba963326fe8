"""MLP Hamiltonian and the Euler-rollout mean of the Gaussian likelihood."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .conserved import SymmetryBank, orbit_maps
from .dynamics import symplectic_form
from .exceptions import DivergenceError, DomainError, PreconditionError, ShapeError

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MLPArchitecture:
    input_dim: int
    hidden: tuple = (200, 200)
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise PreconditionError("layer widths must be positive")

    @property
    def layer_shapes(self):
        """``(out, in)`` per affine layer, ending in the scalar output."""
        dims = (self.input_dim,) + self.hidden + (1,)
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self):
        return sum(o * (i + 1) for o, i in self.layer_shapes)

    def to_dict(self):
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "alpha": self.alpha}

    @classmethod
    def from_dict(cls, data):
        return cls(int(data["input_dim"]), tuple(data["hidden"]), float(data["alpha"]))


def init_parameters(arch, rng):
    """Per-layer ``[W b]`` blocks: fan-in scaled normal weights, zero biases."""
    layers = []
    for out, inp in arch.layer_shapes:
        W = rng.normal(0.0, 1.0 / math.sqrt(inp), size=(out, inp))
        layers.append(np.concatenate([W, np.zeros((out, 1))], axis=1))
    return layers


def mlp_forward(theta, x, alpha=1.0):
    """Scalar field ``F_theta`` evaluated on rows of ``x`` (any leading shape).

    ``theta`` is a sequence of ``[W b]`` blocks of shape ``(out, in + 1)``.
    """
    x = gc.as_node(x)
    lead = x.shape[:-1]
    h = x.reshape(-1, x.shape[-1])
    for i, layer in enumerate(theta):
        layer = gc.as_node(layer)
        if layer.shape[1] - 1 != h.shape[1]:
            raise ShapeError(f"layer {i} expects {layer.shape[1] - 1} inputs, got {h.shape[1]}")
        W = layer[:, :-1]
        b = layer[:, -1]
        h = gc.matmul(h, gc.swapaxes(W)) + b
        if i < len(theta) - 1:
            h = gc.elu(h, alpha)
    if h.shape[1] != 1:
        raise ShapeError("final layer must have a single output")
    return h.reshape(lead)


def symmetrized_gradient(theta, x, alpha, orbit=None):
    """``grad_x`` of the orbit-averaged field at every row of ``x``.

    ``orbit`` is ``(lin, shift)`` from :func:`conserved.orbit_maps`, or None
    for the plain field. ``theta`` is either MLP parameters or any callable
    mapping rows to per-row values.
    """
    field = theta if callable(theta) else (lambda y: mlp_forward(theta, y, alpha))
    if orbit is None:
        f = gc.as_node(field(x)).sum()
    else:
        lin, shift = orbit
        pts = gc.matmul(x, gc.swapaxes(lin)) + shift[:, None, :]
        f = gc.as_node(field(pts)).sum() * (1.0 / lin.shape[0])
    return gc.grad(f, x)


def rollout_mean(theta, bank, x_t, dt, n_steps=20, taus=None, alpha=1.0,
                 differentiable=True):
    """Euler rollout ``x <- x + (dt/n) J grad H_sym(x)`` repeated ``n`` times.

    The orbit samples ``taus`` (``(S, K)``) are shared across the sub-steps;
    pass ``(n_steps, S, K)`` to draw a fresh batch per sub-step. The returned
    Node is differentiable in ``theta``, the bank and ``x_t`` unless
    ``differentiable`` is False, in which case the graph is cut between steps.
    """
    if n_steps < 1:
        raise PreconditionError("n_steps must be at least 1")
    x = gc.as_node(x_t)
    if x.ndim != 2:
        x = x.reshape(1, -1)
    if dt == 0:
        return x
    if bank is None:
        bank = SymmetryBank.empty(x.shape[1])
    if bank.phase_dim != x.shape[1]:
        raise ShapeError(f"bank dimension {bank.phase_dim} != data dimension {x.shape[1]}")
    per_step = taus is not None and np.ndim(taus) == 3
    if per_step and len(taus) != n_steps:
        raise ShapeError(f"need {n_steps} tau batches, got {len(taus)}")
    orbit = orbit_maps(bank, taus) if bank.K > 0 and not per_step else None
    if not x.requires_grad:
        x = gc.leaf(x.value)
    JT = symplectic_form(x.shape[1]).T
    h = dt / n_steps
    for step in range(n_steps):
        if per_step and bank.K > 0:
            orbit = orbit_maps(bank, taus[step])
        g = symmetrized_gradient(theta, x, alpha, orbit)
        x = x + gc.matmul(g, JT) * h
        if not np.all(np.isfinite(x.value)):
            raise DivergenceError(f"rollout diverged at Euler step {step}", step=step)
        if not differentiable:
            x = gc.leaf(x.value)
    return x


def log_likelihood(pred, target, sigma2):
    """``sum_i log N(target_i | pred_i, sigma2)`` over the last axis."""
    if not sigma2 > 0:
        raise DomainError("output variance must be positive")
    pred_n = gc.as_node(pred)
    r = gc.as_node(target) - pred_n
    M = r.shape[-1]
    out = (r * r).sum(axis=-1) * (-0.5 / sigma2) - 0.5 * M * (LOG_2PI + math.log(sigma2))
    if isinstance(pred, gc.Node) or isinstance(target, gc.Node):
        return out
    v = out.value
    return float(v) if v.ndim == 0 else v
