"""Matrix-normal variational posterior, closed-form prior variance and training.

Each layer block ``[W b]`` (``out x (in+1)``) has posterior
``MN(M, S, A)`` with ``S = L_S L_S^T`` over rows and ``A = L_A L_A^T`` over
columns, i.e. covariance ``S kron A`` on the row-major vectorisation. The
prior is ``N(0, v I)`` with ``v`` set per layer to the KL-minimising value,
which leaves the KL as a log-volume ratio that depends only on the posterior.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .conserved import SymmetryBank, TauMeasure, closure_residual, sample_tau
from .dynamics import Dataset, SystemSpec
from .exceptions import (DivergenceError, NumericError, PreconditionError,
                         ShapeError, TrainingAborted)
from .model import MLPArchitecture, init_parameters, log_likelihood, rollout_mean

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
MODES = ("vanilla", "learn", "oracle")
MIN_OUTPUT_VARIANCE = 1e-8


# ---------------------------------------------------------------------------
# posterior

def _lower(L):
    """Lower triangle of ``L`` (arrays or Nodes); the upper part is ignored."""
    n = L.shape[-1]
    if isinstance(L, gc.Node):
        return L * np.tril(np.ones((n, n)))
    return np.tril(L)


def _log_abs_diag(L):
    n = L.shape[-1]
    if isinstance(L, gc.Node):
        d = (L * np.eye(n)).sum(axis=-1)
        return gc.log(d * d).sum() * 0.5
    return float(np.sum(np.log(np.abs(np.diag(L)))))


@dataclass
class LayerPosterior:
    """``q([W b]) = MN(mean, L_S L_S^T, L_A L_A^T)``.

    ``L_S`` (rows, ``out x out``) and ``L_A`` (columns, ``(in+1) x (in+1)``)
    are Cholesky factors stored directly; only their lower triangles are
    used and the sign of a diagonal entry is irrelevant.
    """

    mean: np.ndarray
    L_S: np.ndarray
    L_A: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.L_S = np.tril(np.asarray(self.L_S, dtype=np.float64))
        self.L_A = np.tril(np.asarray(self.L_A, dtype=np.float64))
        out, cols = self.mean.shape
        if self.L_S.shape != (out, out) or self.L_A.shape != (cols, cols):
            raise ShapeError("posterior factor shapes do not match the mean")
        if np.any(np.diag(self.L_S) == 0) or np.any(np.diag(self.L_A) == 0):
            raise PreconditionError("factor diagonals must be nonzero")

    @classmethod
    def initial(cls, mean, diag=1e-3):
        out, cols = mean.shape
        return cls(mean, np.eye(out) * diag, np.eye(cols) * diag)

    @property
    def D(self):
        return self.mean.size

    def covariance(self):
        """Full ``S kron A``; only sensible for small layers."""
        return np.kron(self.L_S @ self.L_S.T, self.L_A @ self.L_A.T)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "L_S": self.L_S.tolist(), "L_A": self.L_A.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["mean"]), np.array(data["L_S"]), np.array(data["L_A"]))


def sample_weights(post, rng, noise=None):
    """Reparameterised draw ``M + L_S E L_A^T`` with ``E`` standard normal."""
    if noise is None:
        noise = rng.standard_normal(post.mean.shape)
    return post.mean + post.L_S @ noise @ post.L_A.T


def _sample_node(mean, L_S, L_A, noise):
    return mean + gc.matmul(gc.matmul(_lower(L_S), noise), gc.swapaxes(_lower(L_A)))


def _trace_sq(L):
    return float(np.sum(np.tril(L) ** 2))


def prior_variance_star(post):
    """KL-minimising prior variance ``(Tr S Tr A + ||M||_F^2) / D``."""
    return (_trace_sq(post.L_S) * _trace_sq(post.L_A) + float(np.sum(post.mean ** 2))) / post.D


def _kl_parts(mean, L_S, L_A):
    """``(Tr S Tr A + ||M||^2, log|S kron A|, D)`` as Nodes."""
    out, cols = mean.shape
    L_S, L_A = _lower(gc.as_node(L_S)), _lower(gc.as_node(L_A))
    tr = (L_S * L_S).sum() * (L_A * L_A).sum() + (mean * mean).sum()
    # log|S kron A| = cols log|S| + out log|A|
    logdet = _log_abs_diag(L_S) * (2.0 * cols) + _log_abs_diag(L_A) * (2.0 * out)
    return tr, logdet, out * cols


def _kl_node(mean, L_S, L_A):
    tr, logdet, D = _kl_parts(mean, L_S, L_A)
    return (gc.log(tr) * D - D * math.log(D) - logdet) * 0.5


def _network_kl_node(layers):
    """KL against one prior variance shared by every layer."""
    parts = [_kl_parts(*layer) for layer in layers]
    tr = parts[0][0]
    logdet = parts[0][1]
    for t, ld, _ in parts[1:]:
        tr = tr + t
        logdet = logdet + ld
    D = sum(d for _, _, d in parts)
    return (gc.log(tr) * D - D * math.log(D) - logdet) * 0.5


def kl_auto(post):
    """``KL(q || N(0, v* I))`` in closed form."""
    with gc.no_record():
        return float(_kl_node(gc.as_node(post.mean), post.L_S, post.L_A).value)


def kl_network(posteriors):
    """Total KL when all layers share a single KL-minimising prior variance."""
    with gc.no_record():
        return float(_network_kl_node(
            [(gc.as_node(p.mean), p.L_S, p.L_A) for p in posteriors]).value)


def prior_variances(posteriors, scope="layer"):
    """Per-layer ``v*``; with ``scope="network"`` every entry is the shared value."""
    if scope == "layer":
        return [prior_variance_star(p) for p in posteriors]
    total = sum(prior_variance_star(p) * p.D for p in posteriors) / sum(p.D for p in posteriors)
    return [total] * len(posteriors)


def gaussian_kl(mean, cov, v):
    """Generic ``KL(N(mean, cov) || N(0, v I))``; an independent check of :func:`kl_auto`."""
    mean = np.ravel(mean)
    D = len(mean)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise NumericError("covariance is not positive definite")
    return 0.5 * (D * math.log(v) - logdet - D + np.trace(cov) / v + mean @ mean / v)


# ---------------------------------------------------------------------------
# output variance

@dataclass
class OutputVariance:
    """Observation noise: ``fixed`` or an exponentially weighted running mean."""

    policy: str = "fixed"
    value: float = 1e-2
    decay: float = 0.9
    frozen: bool = False

    def __post_init__(self):
        if self.policy not in ("fixed", "ewma"):
            raise PreconditionError(f"unknown output variance policy {self.policy!r}")
        if not 0 < self.decay < 1:
            raise PreconditionError("decay must lie in (0, 1)")
        if not self.value > 0:
            raise PreconditionError("output variance must be positive")


def update_output_variance(state, residuals):
    """Fold a batch of squared errors into ``state``; returns the new variance."""
    if state.policy == "fixed" or state.frozen:
        return state.value
    batch = float(np.mean(residuals))
    state.value = max(MIN_OUTPUT_VARIANCE, state.decay * state.value + (1.0 - state.decay) * batch)
    return state.value


# ---------------------------------------------------------------------------
# configuration and checkpoints

@dataclass
class TrainConfig:
    mode: str = "learn"
    K: int = 3
    S: int = 100
    n_weight_samples: int = 2
    batch_traj: int | None = None
    epochs: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    n_steps: int = 20
    sigma2_policy: str = "ewma"
    sigma2: float = 1e-2
    ewma_decay: float = 0.9
    freeze_fraction: float = 0.1
    tau_measure: str = "normal"
    resample_tau_per_step: bool = False
    hidden: tuple = (200, 200)
    alpha: float = 1.0
    posterior_init_diag: float = 0.1
    prior_scope: str = "layer"
    eta_init_std: float = 0.01
    S_eval: int = 100
    max_points: int = 256
    max_skip_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.mode not in MODES:
            raise PreconditionError(f"mode must be one of {MODES}")
        for name in ("S", "n_weight_samples", "n_steps", "S_eval", "max_points"):
            if getattr(self, name) < 1:
                raise PreconditionError(f"{name} must be positive")
        if self.epochs < 0 or self.K < 0:
            raise PreconditionError("epochs and K must be non-negative")
        if self.batch_traj is not None and self.batch_traj < 1:
            raise PreconditionError("batch_traj must be positive")
        if not 0 < self.ewma_decay < 1:
            raise PreconditionError("ewma_decay must lie in (0, 1)")
        if self.sigma2_policy not in ("fixed", "ewma"):
            raise PreconditionError("sigma2_policy must be 'fixed' or 'ewma'")
        if self.prior_scope not in ("layer", "network"):
            raise PreconditionError("prior_scope must be 'layer' or 'network'")
        TauMeasure.parse(self.tau_measure)

    @property
    def measure(self):
        return TauMeasure.parse(self.tau_measure)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise PreconditionError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


@dataclass
class Checkpoint:
    architecture: MLPArchitecture
    posteriors: list
    bank: SymmetryBank
    sigma2: float
    prior_variances: list
    config: TrainConfig
    system: SystemSpec | None = None
    dt: float | None = None
    curves: dict = field(default_factory=lambda: {"neg_elbo": [], "nll": [], "kl": [], "sigma2": []})
    metrics: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    run_config: dict | None = None

    def mean_weights(self):
        return [p.mean for p in self.posteriors]

    def to_json(self):
        doc = {
            "schema_version": SCHEMA_VERSION,
            "architecture": self.architecture.to_dict(),
            "posteriors": [p.to_dict() for p in self.posteriors],
            "bank": self.bank.to_dict(),
            "sigma2": self.sigma2,
            "prior_variances": list(self.prior_variances),
            "config": self.config.to_dict(),
            "seed": self.config.seed,
            "system": None if self.system is None else self.system.to_dict(),
            "dt": self.dt,
            "curves": self.curves,
            "metrics": self.metrics,
            "notes": self.notes,
            "run_config": self.run_config,
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported checkpoint schema {doc.get('schema_version')!r}")
        system = doc.get("system")
        return cls(
            architecture=MLPArchitecture.from_dict(doc["architecture"]),
            posteriors=[LayerPosterior.from_dict(p) for p in doc["posteriors"]],
            bank=SymmetryBank.from_dict(doc["bank"]),
            sigma2=float(doc["sigma2"]),
            prior_variances=list(doc["prior_variances"]),
            config=TrainConfig.from_dict(doc["config"]),
            system=None if system is None else SystemSpec.from_dict(system),
            dt=doc.get("dt"),
            curves=doc.get("curves") or {},
            metrics=doc.get("metrics") or {},
            notes=doc.get("notes") or [],
            run_config=doc.get("run_config"),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# ---------------------------------------------------------------------------
# ELBO

@dataclass
class ElboResult:
    estimate: float
    expected_loglik: float
    kl: float
    n_pairs: int
    grads: dict | None
    sq_residuals: np.ndarray
    skipped: int = 0

    @property
    def nll_per_pair(self):
        return -self.expected_loglik / self.n_pairs

    @property
    def kl_per_pair(self):
        return self.kl / self.n_pairs


class _Params:
    """Flat name -> array view of everything the optimiser may touch."""

    def __init__(self, posteriors, bank, learn_bank):
        self.posteriors = posteriors
        self.bank = bank
        self.learn_bank = learn_bank

    def names(self):
        out = []
        for l in range(len(self.posteriors)):
            out += [f"mean{l}", f"row{l}", f"col{l}"]
        if self.learn_bank:
            out += ["bank_A", "bank_b"]
        return out

    def get(self, name):
        if name == "bank_A":
            return self.bank.A
        if name == "bank_b":
            return self.bank.b
        for prefix, attr in (("mean", "mean"), ("row", "L_S"), ("col", "L_A")):
            if name.startswith(prefix):
                return getattr(self.posteriors[int(name[len(prefix):])], attr)
        raise KeyError(name)


def _chunks(n, size):
    return [slice(i, min(n, i + size)) for i in range(0, n, size)]


def elbo_minibatch(data, posteriors, bank, config, rng, n_total=None, sigma2=None,
                   learn_bank=False, with_grads=True):
    """Unbiased minibatch estimate of the ELBO and its gradient.

    ``(N/|batch|) sum_pairs mean_m log N(x_t' | rollout(theta_m, tau_m), sigma2)
    - sum_l KL_l``, where each weight-sample index ``m`` draws fresh weights and
    a fresh batch of ``S`` symmetry times shared by all pairs. Gradients (of the
    ELBO, for maximisation) cover every posterior array and, with
    ``learn_bank``, the bank's ``A`` and ``b``.
    """
    n_batch = len(data)
    if n_batch == 0:
        raise PreconditionError("empty minibatch")
    N = n_batch if n_total is None else n_total
    sigma2 = config.sigma2 if sigma2 is None else sigma2
    scale = N / n_batch
    alpha = config.alpha
    measure = config.measure
    Msamp = config.n_weight_samples

    leaves = {}
    if with_grads:
        for l, p in enumerate(posteriors):
            leaves[f"mean{l}"] = gc.leaf(p.mean)
            leaves[f"row{l}"] = gc.leaf(p.L_S)
            leaves[f"col{l}"] = gc.leaf(p.L_A)
        if learn_bank and bank.K:
            leaves["bank_A"] = gc.leaf(bank.A)
            leaves["bank_b"] = gc.leaf(bank.b)
    grads = {name: np.zeros_like(leaf.value) for name, leaf in leaves.items()}

    def layer_nodes(l):
        p = posteriors[l]
        if with_grads:
            return leaves[f"mean{l}"], leaves[f"row{l}"], leaves[f"col{l}"]
        return gc.constant(p.mean), gc.constant(p.L_S), gc.constant(p.L_A)

    if "bank_A" in leaves:
        bank_nodes = SymmetryBank(leaves["bank_A"], leaves["bank_b"])
    else:
        bank_nodes = bank

    S = config.S if bank.K else 1
    chunk = max(1, config.max_points // S)
    loglik_sum = 0.0
    sq = np.zeros(data.x_t.shape)
    skipped = np.zeros(n_batch, dtype=bool)
    for m in range(Msamp):
        noises = [rng.standard_normal(p.mean.shape) for p in posteriors]
        taus = _draw_taus(measure, bank.K, S, config, rng)
        for sl in _chunks(n_batch, chunk):
            rows = np.arange(n_batch)[sl]
            ll, res, bad = _chunk_loglik(data, rows, posteriors, layer_nodes, noises,
                                         bank_nodes, taus, config, sigma2, alpha,
                                         with_grads)
            skipped[rows[bad]] = True
            if ll is None:
                continue
            weight = scale / Msamp
            loglik_sum += float(ll.value) * weight
            sq[rows[~bad]] += res / Msamp
            if with_grads:
                names = list(leaves)
                gs = gc.backward(ll * weight, [leaves[k] for k in names])
                for k, g in zip(names, gs):
                    grads[k] += g

    n_skip = int(skipped.sum())
    if n_skip > config.max_skip_fraction * n_batch:
        raise NumericError(f"{n_skip} of {n_batch} rollouts diverged in one minibatch")
    if n_skip:
        log.warning("skipped %d divergent pairs", n_skip)

    kl_total = 0.0
    if config.prior_scope == "network":
        layers = [layer_nodes(l) for l in range(len(posteriors))]
        kl = _network_kl_node(layers)
        kl_total = float(kl.value)
        if with_grads:
            flat = [node for layer in layers for node in layer]
            gs = gc.backward(kl, flat)
            for i, g in enumerate(gs):
                grads[f"{('mean', 'row', 'col')[i % 3]}{i // 3}"] -= g
    else:
        for l in range(len(posteriors)):
            kl = _kl_node(*layer_nodes(l))
            kl_total += float(kl.value)
            if with_grads:
                gs = gc.backward(kl, [leaves[f"mean{l}"], leaves[f"row{l}"], leaves[f"col{l}"]])
                for k, g in zip(("mean", "row", "col"), gs):
                    grads[f"{k}{l}"] -= g
    return ElboResult(loglik_sum - kl_total, loglik_sum, kl_total, N,
                      grads if with_grads else None, sq[~skipped], n_skip)


def _draw_taus(measure, K, S, config, rng):
    if not K:
        return None
    if config.resample_tau_per_step:
        return np.stack([sample_tau(measure, K, S, rng) for _ in range(config.n_steps)])
    return sample_tau(measure, K, S, rng)


def _chunk_loglik(data, rows, posteriors, layer_nodes, noises, bank_nodes, taus,
                  config, sigma2, alpha, with_grads):
    """Summed log-likelihood of one chunk; divergent pairs are dropped."""
    x_t, x_tp = data.x_t[rows], data.x_tp[rows]
    bad = np.zeros(len(rows), dtype=bool)

    def run(idx):
        theta = [_sample_node(*layer_nodes(l), noises[l]) for l in range(len(posteriors))]
        pred = rollout_mean(theta, bank_nodes, x_t[idx], data.dt, config.n_steps, taus,
                            alpha, differentiable=with_grads)
        return pred, log_likelihood(pred, x_tp[idx], sigma2).sum()

    try:
        pred, ll = run(slice(None))
        return ll, (pred.value - x_tp) ** 2, bad
    except DivergenceError:
        pass
    keep = []
    for i in range(len(rows)):
        try:
            run([i])
            keep.append(i)
        except DivergenceError:
            bad[i] = True
    if not keep:
        return None, None, bad
    pred, ll = run(keep)
    return ll, (pred.value - x_tp[keep]) ** 2, bad


# ---------------------------------------------------------------------------
# training

class Adam:
    def __init__(self, names, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros(s) for k, s in zip(names, shapes)}
        self.v = {k: np.zeros(s) for k, s in zip(names, shapes)}
        self.t = 0

    def step(self, params, grads, lr):
        """In-place descent step on ``params`` (dict of arrays) given ``grads``."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def cosine_lr(base, step, total):
    if total <= 0:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * min(step, total) / total))


def default_K(system):
    if system is None or system.kind == "sho":
        return 3
    if system.kind == "nharm":
        return system.n ** 2 + 3
    return 10


def initial_bank(config, system, M, rng):
    if config.mode == "vanilla":
        return SymmetryBank.empty(M)
    if config.mode == "oracle":
        from .analysis import ground_truth_quantities
        if system is None:
            raise PreconditionError("oracle mode needs the data's system spec")
        return SymmetryBank.from_quantities(ground_truth_quantities(system), trainable=False)
    if config.K == 0:
        return SymmetryBank.empty(M)
    return SymmetryBank.random(config.K, M, rng, std=config.eta_init_std)


def initialize(data, config):
    """Untrained checkpoint for ``data`` under ``config``."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    M = data.phase_dim
    arch = MLPArchitecture(M, config.hidden, config.alpha)
    means = init_parameters(arch, rng)
    posteriors = [LayerPosterior.initial(m, config.posterior_init_diag) for m in means]
    bank = initial_bank(config, data.system, M, rng)
    return Checkpoint(arch, posteriors, bank, config.sigma2,
                      prior_variances(posteriors, config.prior_scope), config,
                      data.system, data.dt)


def _batches(data, config, rng):
    trajs = np.unique(data.traj)
    if config.batch_traj is None or config.batch_traj >= len(trajs):
        return [np.arange(len(data))]
    order = rng.permutation(trajs)
    out = []
    for i in range(0, len(order), config.batch_traj):
        chosen = order[i:i + config.batch_traj]
        out.append(np.flatnonzero(np.isin(data.traj, chosen)))
    return out


def train(data, config, progress=None):
    """Fit the posterior (and, in ``learn`` mode, the bank) by maximising the ELBO.

    ``progress`` is called as ``progress(epoch, record)`` after each epoch.
    Raises :class:`TrainingAborted` with the last finite checkpoint if any
    parameter turns non-finite.
    """
    ckpt = initialize(data, config)
    if ckpt.system is not None and ckpt.system.phase_dim != data.phase_dim:
        raise ShapeError("dataset dimension does not match its system spec")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    learn_bank = config.mode == "learn" and ckpt.bank.K > 0
    params = _Params(ckpt.posteriors, ckpt.bank, learn_bank)
    names = params.names()
    arrays = {k: params.get(k) for k in names}
    opt = Adam(names, [a.shape for a in arrays.values()], config.beta1, config.beta2)
    noise = OutputVariance(config.sigma2_policy, config.sigma2, config.ewma_decay)
    n_batches = len(_batches(data, config, np.random.default_rng(0)))
    total_steps = config.epochs * n_batches
    freeze_at = config.epochs - int(round(config.freeze_fraction * config.epochs))
    N = len(data)
    step = 0
    for epoch in range(config.epochs):
        noise.frozen = epoch >= freeze_at
        sums = np.zeros(3)
        for idx in _batches(data, config, rng):
            batch = data.subset(idx)
            last_good = _snapshot(ckpt, noise.value)
            res = elbo_minibatch(batch, ckpt.posteriors, ckpt.bank, config, rng,
                                 n_total=N, sigma2=noise.value, learn_bank=learn_bank)
            lr = cosine_lr(config.lr, step, total_steps)
            grads = {k: -res.grads[k] / N for k in names}
            opt.step(arrays, grads, lr)
            step += 1
            if not all(np.all(np.isfinite(a)) for a in arrays.values()):
                raise TrainingAborted(f"non-finite parameters at epoch {epoch}",
                                      last_good=last_good, epoch=epoch)
            update_output_variance(noise, res.sq_residuals)
            sums += (res.nll_per_pair, res.kl_per_pair, 1.0)
        nll, kl = sums[0] / sums[2], sums[1] / sums[2]
        ckpt.curves["nll"].append(nll)
        ckpt.curves["kl"].append(kl)
        ckpt.curves["neg_elbo"].append(nll + kl)
        ckpt.curves["sigma2"].append(noise.value)
        if progress is not None:
            progress(epoch, {"epoch": epoch, "neg_elbo": nll + kl, "nll": nll, "kl": kl,
                             "sigma2": noise.value})
    ckpt.sigma2 = noise.value
    ckpt.prior_variances = prior_variances(ckpt.posteriors, config.prior_scope)
    ckpt.metrics = final_metrics(ckpt, data)
    if learn_bank:
        ckpt.notes.append(f"bracket closure residual {closure_residual(ckpt.bank):.3g}")
    return ckpt


def _snapshot(ckpt, sigma2):
    snap = copy.deepcopy(ckpt)
    snap.sigma2 = sigma2
    return snap


def final_metrics(ckpt, data, seed=None):
    """Table columns on the training data: Train MSE, NLL/N, KL/N, -ELBO/N.

    The ELBO terms come from one full-data pass with a fixed seed, so the
    three columns refer to identical samples.
    """
    config = ckpt.config
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    res = elbo_minibatch(data, ckpt.posteriors, ckpt.bank, config, rng,
                         sigma2=ckpt.sigma2, with_grads=False)
    nll, kl = res.nll_per_pair, res.kl_per_pair
    mse = test_mse(ckpt, data, S=config.S, seed=seed)
    return {"train_mse": mse, "nll_per_n": nll, "kl_per_n": kl, "neg_elbo_per_n": nll + kl,
            "n_pairs": len(data), "skipped": res.skipped}


def predict(ckpt, x_t, dt=None, S=None, seed=0, n_steps=None, weight_samples=0):
    """Rollout predictions with seeded orbit samples.

    By default the network runs at the posterior-mean weights. With
    ``weight_samples > 0`` the prediction is instead averaged over that many
    networks drawn from the posterior (a Monte-Carlo posterior predictive mean).
    """
    config = ckpt.config
    dt = ckpt.dt if dt is None else dt
    S = config.S_eval if S is None else S
    n_steps = config.n_steps if n_steps is None else n_steps
    if weight_samples < 0:
        raise PreconditionError("weight_samples must be non-negative")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    bank = ckpt.bank
    S_used = S if bank.K else 1
    taus = sample_tau(config.measure, bank.K, S_used, rng) if bank.K else None
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    if weight_samples:
        thetas = [[sample_weights(p, rng) for p in ckpt.posteriors] for _ in range(weight_samples)]
    else:
        thetas = [ckpt.mean_weights()]
    chunk = max(1, config.max_points // S_used)
    out = np.zeros_like(x_t)
    for theta in thetas:
        for sl in _chunks(len(x_t), chunk):
            out[sl] += rollout_mean(theta, bank, x_t[sl], dt, n_steps, taus,
                                    ckpt.architecture.alpha, differentiable=False).value
    return out / len(thetas)


def test_mse(ckpt, data, S=None, seed=0, weight_samples=0):
    """Mean squared one-step prediction error over all pairs and coordinates."""
    pred = predict(ckpt, data.x_t, data.dt, S=S, seed=seed, weight_samples=weight_samples)
    return float(np.mean((pred - data.x_tp) ** 2))


def field_values(ckpt, points, S=200, seed=0):
    """Symmetrised learned Hamiltonian at ``points`` (rows), posterior-mean weights."""
    from .conserved import symmetrize
    from .model import mlp_forward
    config = ckpt.config
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    bank = ckpt.bank
    taus = sample_tau(config.measure, bank.K, S, rng) if bank.K else None
    theta = ckpt.mean_weights()
    alpha = ckpt.architecture.alpha
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.empty(len(points))
    with gc.no_record():
        for sl in _chunks(len(points), max(1, config.max_points // max(S, 1))):
            out[sl] = symmetrize(lambda y: mlp_forward(theta, y, alpha), bank, points[sl], taus)
    return out
