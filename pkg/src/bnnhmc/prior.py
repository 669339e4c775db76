"""Factorised priors over flat parameter vectors.

Every family is i.i.d. across coordinates, symmetric about zero, and its
log-density includes the normalising constant so that densities at
different temperatures stay comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianPrior:
    """``N(0, variance)`` on every coordinate."""

    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    family = "gaussian"

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    @property
    def marginal_variance(self) -> float:
        return float(self.variance)

    def log_prob(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return float(-0.5 * w.size * (_LOG_2PI + math.log(self.variance))
                     - 0.5 * (w @ w) / self.variance)

    def grad_log_prob(self, w) -> np.ndarray:
        return -np.asarray(w, dtype=np.float64) / self.variance

    def sample(self, dim: int, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.std * rng.standard_normal(dim)

    def to_dict(self) -> dict:
        return {"family": "gaussian", "variance": self.variance}


@dataclass(frozen=True)
class MixturePrior:
    """Two zero-mean Gaussians with the given variances and mixing weights."""

    variances: tuple[float, float] = (1 / 40, 1 / 160)
    weights: tuple[float, float] = (0.5, 0.5)

    family = "mog"

    def __post_init__(self):
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        object.__setattr__(self, "weights", tuple(float(p) for p in self.weights))
        if len(self.variances) != len(self.weights) or not self.variances:
            raise ValueError("variances and weights must have the same non-zero length")
        if any(not v > 0 for v in self.variances):
            raise ValueError("mixture variances must be positive")
        if any(not p > 0 for p in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to one")

    @property
    def marginal_variance(self) -> float:
        return float(sum(p * v for p, v in zip(self.weights, self.variances)))

    @property
    def std(self) -> float:
        return math.sqrt(self.marginal_variance)

    def _component_logs(self, w):
        # (K, d) per-component log weight + log density
        w = np.asarray(w, dtype=np.float64)
        return np.stack([
            math.log(p) - 0.5 * (_LOG_2PI + math.log(v)) - 0.5 * w * w / v
            for p, v in zip(self.weights, self.variances)
        ])

    def _single(self) -> GaussianPrior | None:
        # identical components collapse to one Gaussian
        if len(set(self.variances)) == 1:
            return GaussianPrior(self.variances[0])
        return None

    def log_prob(self, w) -> float:
        if (g := self._single()) is not None:
            return g.log_prob(w)
        return float(np.logaddexp.reduce(self._component_logs(w), axis=0).sum())

    def grad_log_prob(self, w) -> np.ndarray:
        if (g := self._single()) is not None:
            return g.grad_log_prob(w)
        w = np.asarray(w, dtype=np.float64)
        logs = self._component_logs(w)
        resp = np.exp(logs - np.logaddexp.reduce(logs, axis=0))
        inv_var = np.array([1.0 / v for v in self.variances])[:, None]
        return -w * (resp * inv_var).sum(axis=0)

    def sample(self, dim: int, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        comp = rng.choice(len(self.weights), size=dim, p=np.array(self.weights))
        stds = np.sqrt(np.array(self.variances))[comp]
        return stds * rng.standard_normal(dim)

    def to_dict(self) -> dict:
        return {"family": "mog", "variances": list(self.variances), "weights": list(self.weights)}


@dataclass(frozen=True)
class LogisticPrior:
    """Zero-location logistic on every coordinate, scale chosen to hit ``variance``."""

    variance: float = 1 / 40

    family = "logistic"

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def scale(self) -> float:
        return math.sqrt(3.0 * self.variance) / math.pi

    @property
    def marginal_variance(self) -> float:
        return float(self.variance)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def log_prob(self, w) -> float:
        s = self.scale
        z = np.abs(np.asarray(w, dtype=np.float64)) / s
        return float((-z - 2.0 * np.log1p(np.exp(-z))).sum() - z.size * math.log(s))

    def grad_log_prob(self, w) -> np.ndarray:
        s = self.scale
        return -np.tanh(np.asarray(w, dtype=np.float64) / (2.0 * s)) / s

    def sample(self, dim: int, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.logistic(0.0, self.scale, size=dim)

    def to_dict(self) -> dict:
        return {"family": "logistic", "variance": self.variance}


Prior = GaussianPrior | MixturePrior | LogisticPrior


def make_prior(family: str = "gaussian", **kwargs) -> Prior:
    """Build a prior from its family name, e.g. ``make_prior("mog", variances=(...))``."""
    if family == "gaussian":
        return GaussianPrior(**kwargs)
    if family == "mog":
        return MixturePrior(**kwargs)
    if family == "logistic":
        return LogisticPrior(**kwargs)
    raise ValueError(f"unknown prior family {family!r}")


def prior_from_dict(d: dict) -> Prior:
    d = dict(d)
    family = d.pop("family", "gaussian")
    if "variances" in d:
        d["variances"] = tuple(d["variances"])
    if "weights" in d:
        d["weights"] = tuple(d["weights"])
    return make_prior(family, **d)


def weight_decay_prior(weight_decay: float) -> GaussianPrior:
    """Gaussian prior equivalent to an L2 penalty ``weight_decay/2 * |w|^2``."""
    return GaussianPrior(1.0 / weight_decay)


def log_prior(prior: Prior, w) -> float:
    return prior.log_prob(w)


def grad_log_prior(prior: Prior, w) -> np.ndarray:
    return prior.grad_log_prob(w)


def sample_prior(prior: Prior, dim: int, seed=None) -> np.ndarray:
    if dim < 1:
        raise ValueError("dim must be at least 1")
    return prior.sample(dim, seed)
