"""scikit-learn style wrapper around variational training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import variational as vi
from .analysis import analyze
from .dynamics import Dataset


class NoetherRazorRegressor(RegressorMixin, BaseEstimator):
    """Variational Hamiltonian network with learnable conserved quantities.

    ``fit(X, Y)`` takes rows of phase-space states ``X`` and the states ``Y``
    reached ``dt`` later. ``groups`` gives trajectory ids for minibatching;
    every row is its own trajectory when omitted.

    Parameters mirror :class:`variational.TrainConfig`.
    """

    def __init__(self, dt=0.2, mode="learn", K=3, hidden=(200, 200), alpha=1.0, S=100,
                 n_weight_samples=2, batch_traj=None, epochs=2000, lr=1e-3, n_steps=20,
                 sigma2_policy="ewma", sigma2=1e-2, tau_measure="normal", S_eval=100,
                 system=None, seed=0):
        self.dt = dt
        self.mode = mode
        self.K = K
        self.hidden = hidden
        self.alpha = alpha
        self.S = S
        self.n_weight_samples = n_weight_samples
        self.batch_traj = batch_traj
        self.epochs = epochs
        self.lr = lr
        self.n_steps = n_steps
        self.sigma2_policy = sigma2_policy
        self.sigma2 = sigma2
        self.tau_measure = tau_measure
        self.S_eval = S_eval
        self.system = system
        self.seed = seed

    def _train_config(self):
        return vi.TrainConfig(
            mode=self.mode, K=self.K, hidden=tuple(self.hidden), alpha=self.alpha, S=self.S,
            n_weight_samples=self.n_weight_samples, batch_traj=self.batch_traj,
            epochs=self.epochs, lr=self.lr, n_steps=self.n_steps,
            sigma2_policy=self.sigma2_policy, sigma2=self.sigma2,
            tau_measure=self.tau_measure, S_eval=self.S_eval, seed=self.seed)

    def fit(self, X, Y, groups=None):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if X.shape != Y.shape:
            raise ValueError(f"X and Y shapes differ: {X.shape} vs {Y.shape}")
        if X.shape[1] % 2:
            raise ValueError("phase space dimension must be even")
        traj = np.arange(len(X)) if groups is None else np.asarray(groups, dtype=np.int64)
        data = Dataset(X, Y, traj, float(self.dt), self.system)
        self.checkpoint_ = vi.train(data, self._train_config())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "checkpoint_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return vi.predict(self.checkpoint_, X, seed=self.seed)

    def score(self, X, Y, sample_weight=None):
        """Negative mean squared prediction error."""
        pred = self.predict(X)
        return -float(np.mean((pred - np.asarray(Y, dtype=np.float64)) ** 2))

    def hamiltonian(self, X, S=200):
        """Symmetrised learned Hamiltonian at posterior-mean weights."""
        check_is_fitted(self, "checkpoint_")
        return vi.field_values(self.checkpoint_, check_array(X, dtype=np.float64), S=S,
                               seed=self.seed)

    def symmetry_report(self, threshold=0.05, normalize="max"):
        check_is_fitted(self, "checkpoint_")
        if self.system is None:
            raise ValueError("symmetry analysis needs the system spec")
        return analyze(self.checkpoint_.bank, self.system, threshold, normalize)
