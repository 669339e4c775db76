"""scikit-learn style wrappers around the samplers.

``fit`` draws posterior samples (HMC, SGLD, SGHMC) or trains point
estimates (SGD, deep ensembles); prediction is the Bayesian model average
over what ``fit`` kept.  Hyper-parameters are plain constructor arguments,
so ``get_params`` / ``set_params`` / ``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import approx, evaluate, hmc
from .model import Dataset, ModelSpec
from .posterior import Posterior
from .prior import make_prior

METHODS = ("hmc", "sgld", "sghmc", "sgd", "ensemble")


class _BNNBase(BaseEstimator):
    def __init__(self, hidden_widths=(50,), activation="swish", prior_variance=0.2,
                 method="hmc", temperature=1.0, step_size=1e-4, trajectory_length=None,
                 n_burnin=0, n_samples=20, n_chains=1, n_epochs=100, batch_size=None,
                 momentum=0.9, n_models=5, seed=0, workers=None):
        self.hidden_widths = hidden_widths
        self.activation = activation
        self.prior_variance = prior_variance
        self.method = method
        self.temperature = temperature
        self.step_size = step_size
        self.trajectory_length = trajectory_length
        self.n_burnin = n_burnin
        self.n_samples = n_samples
        self.n_chains = n_chains
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.momentum = momentum
        self.n_models = n_models
        self.seed = seed
        self.workers = workers

    def _spec(self, n_features: int) -> ModelSpec:
        raise NotImplementedError

    def _fit(self, X, y):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        self.n_features_in_ = X.shape[1]
        self.model_ = self._spec(X.shape[1])
        prior = make_prior("gaussian", variance=self.prior_variance)
        post = Posterior(self.model_, prior, Dataset(X, y), self.temperature)
        if self.method == "hmc":
            tau = self.trajectory_length or hmc.suggest_trajectory_length(prior.std)
            cfg = hmc.HmcConfig(tau, self.step_size, self.n_burnin, self.n_samples,
                                self.n_chains, self.seed)
            stores = hmc.run_chains(cfg, post, workers=self.workers)
            self.samples_ = np.concatenate([s.samples for s in stores])
            self.accept_rate_ = float(np.mean([s.accept_rate for s in stores]))
            return self
        tc = approx.TrainConfig(
            step_size=self.step_size, n_epochs=self.n_epochs, batch_size=self.batch_size,
            momentum=self.momentum if self.method in ("sgd", "ensemble", "sghmc") else 0.0,
            seed=self.seed, n_burnin_epochs=self.n_burnin,
            thin_epochs=max(1, (self.n_epochs - self.n_burnin) // self.n_samples),
            schedule="cosine" if self.method in ("sgd", "ensemble") else "constant")
        if self.method in ("sgd", "ensemble"):
            n = self.n_models if self.method == "ensemble" else 1
            self.samples_ = np.array(approx.deep_ensemble(n, tc, post, workers=self.workers))
        else:
            run = approx.sgld_run if self.method == "sgld" else approx.sghmc_run
            self.samples_ = np.concatenate(
                [run(tc, post, chain_index=i).samples for i in range(self.n_chains)])
        return self

    def _predictive(self, X) -> evaluate.PredictiveDistribution:
        check_is_fitted(self, "samples_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return evaluate.bma_predict(self.samples_, self.model_, X)


class BNNClassifier(ClassifierMixin, _BNNBase):
    """Bayesian MLP classifier; ``predict_proba`` is the BMA over kept samples."""

    def _spec(self, n_features):
        return ModelSpec(n_features, tuple(self.hidden_widths), self.activation,
                         "classification", len(self.classes_))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes")
        return self._fit(X, codes.astype(np.int64))

    def predict_proba(self, X) -> np.ndarray:
        return self._predictive(X).probs

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class BNNRegressor(RegressorMixin, _BNNBase):
    """Bayesian MLP regressor with a learned (heteroscedastic) noise head.

    ``noise_std`` fixes the observation noise instead.
    """

    def __init__(self, hidden_widths=(50,), activation="swish", prior_variance=0.2,
                 method="hmc", temperature=1.0, step_size=1e-4, trajectory_length=None,
                 n_burnin=0, n_samples=20, n_chains=1, n_epochs=100, batch_size=None,
                 momentum=0.9, n_models=5, seed=0, workers=None, noise_std=None):
        super().__init__(hidden_widths, activation, prior_variance, method, temperature,
                         step_size, trajectory_length, n_burnin, n_samples, n_chains, n_epochs,
                         batch_size, momentum, n_models, seed, workers)
        self.noise_std = noise_std

    def _spec(self, n_features):
        return ModelSpec(n_features, tuple(self.hidden_widths), self.activation, "regression",
                         noise_std=self.noise_std)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        return self._fit(X, y.astype(np.float64))

    def predict(self, X, return_std: bool = False):
        pred = self._predictive(X)
        return (pred.mean, pred.std) if return_std else pred.mean
