"""Bayesian model averages and the metrics used to compare predictive distributions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import entr, logsumexp
from scipy.stats import rankdata

from .model import ModelSpec, param_count, predict_gaussian, predict_probs
from .store import stack_samples

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PredictiveDistribution:
    """Per-input predictive: class probabilities, or a Gaussian summary.

    Regression predictives also keep the per-sample ``(mu, sigma)``
    components (shape ``(S, n)``) so that the mixture density can be
    evaluated exactly.
    """

    probs: np.ndarray | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    component_means: np.ndarray | None = None
    component_stds: np.ndarray | None = None

    def __post_init__(self):
        if (self.probs is None) == (self.mean is None):
            raise ValueError("give either probs (classification) or mean/std (regression)")
        if self.probs is not None:
            p = np.asarray(self.probs, dtype=np.float64)
            if p.ndim != 2:
                raise ValueError("probs must be an (n, C) matrix")
            if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0), initial=0.0) > 1e-9:
                raise ValueError("probability rows must be non-negative and sum to 1")
            self.probs = p
        else:
            self.mean = np.asarray(self.mean, dtype=np.float64).ravel()
            self.std = np.asarray(self.std, dtype=np.float64).ravel()
            if self.mean.shape != self.std.shape:
                raise ValueError("mean and std must have the same length")
            if not np.all(self.std > 0):
                raise ValueError("predictive std must be positive")

    @property
    def is_classification(self) -> bool:
        return self.probs is not None

    @property
    def n(self) -> int:
        return self.probs.shape[0] if self.is_classification else self.mean.shape[0]

    @property
    def confidence(self) -> np.ndarray:
        """Probability of the predicted (argmax) class."""
        return self._probs().max(axis=1)

    def _probs(self) -> np.ndarray:
        if not self.is_classification:
            raise ValueError("this metric needs a classification predictive")
        return self.probs


def _as_probs(p) -> np.ndarray:
    if isinstance(p, PredictiveDistribution):
        return p._probs()
    return np.asarray(p, dtype=np.float64)


def bma_predict(samples, model: ModelSpec, inputs) -> PredictiveDistribution:
    """Average the per-sample predictives of one or more stores or vectors."""
    w = stack_samples(samples)
    if w.shape[0] < 1:
        raise ValueError("need at least one sample")
    if w.shape[1] != param_count(model):
        raise ValueError(f"samples have {w.shape[1]} parameters, model has {param_count(model)}")
    if model.head == "classification":
        acc = None
        for row in w:
            p = predict_probs(model, row, inputs)
            acc = p if acc is None else acc + p
        return PredictiveDistribution(probs=acc / w.shape[0])
    mus, sigmas = zip(*(predict_gaussian(model, row, inputs) for row in w))
    mus, sigmas = np.array(mus), np.array(sigmas)
    mean = mus.mean(axis=0)
    # total variance: mean of component variances plus variance of component means
    var = (sigmas ** 2).mean(axis=0) + ((mus - mean) ** 2).mean(axis=0)
    return PredictiveDistribution(mean=mean, std=np.sqrt(var),
                                  component_means=mus, component_stds=sigmas)


def accuracy(pred, labels) -> float:
    """Top-1 accuracy; ties go to the lowest class index."""
    p = _as_probs(pred)
    return float(np.mean(np.argmax(p, axis=1) == np.asarray(labels)))


def nll(pred, labels) -> float:
    """Mean negative log-likelihood of the labels (or targets, for regression)."""
    if isinstance(pred, PredictiveDistribution) and not pred.is_classification:
        return -gaussian_test_ll(pred, labels)
    p = _as_probs(pred)
    y = np.asarray(labels)
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(p[np.arange(p.shape[0]), y])))


def rmse(pred: PredictiveDistribution, targets, scale: float = 1.0) -> float:
    """Root-mean-squared error of the predictive mean, times ``scale``."""
    r = pred.mean - np.asarray(targets, dtype=np.float64)
    return float(scale * math.sqrt(np.mean(r * r)))


def gaussian_test_ll(pred: PredictiveDistribution, targets, scale: float = 1.0) -> float:
    """Mean log predictive density of real targets.

    The density is the equal-weight mixture of the per-sample Gaussians when
    components are available, else the single Gaussian ``(mean, std)``.
    ``scale`` converts standardised targets back to original units
    (subtracts ``log scale`` per point).
    """
    y = np.asarray(targets, dtype=np.float64)
    if pred.component_means is not None:
        mu, sd = pred.component_means, pred.component_stds
    else:
        mu, sd = pred.mean[None, :], pred.std[None, :]
    z = (y[None, :] - mu) / sd
    logp = -0.5 * _LOG_2PI - np.log(sd) - 0.5 * z * z
    per_point = logsumexp(logp, axis=0) - math.log(mu.shape[0])
    return float(per_point.mean() - math.log(scale))


def _bin_index(conf: np.ndarray, n_bins: int) -> np.ndarray:
    # right-closed bins (k/n, (k+1)/n]; a confidence of exactly 0 joins the first bin
    return np.clip(np.ceil(conf * n_bins).astype(np.int64) - 1, 0, n_bins - 1)


@dataclass
class CalibrationCurve:
    bin_lower: np.ndarray
    bin_upper: np.ndarray
    confidence: np.ndarray
    accuracy: np.ndarray
    count: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("bin_lower", "bin_upper", "confidence", "accuracy", "count")}


def calibration_curve(pred, labels, n_bins: int = 20) -> CalibrationCurve:
    """Mean confidence and accuracy per equal-width confidence bin (empty bins dropped)."""
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    p = _as_probs(pred)
    conf = p.max(axis=1)
    correct = (np.argmax(p, axis=1) == np.asarray(labels)).astype(np.float64)
    idx = _bin_index(conf, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    keep = count > 0
    conf_sum = np.bincount(idx, weights=conf, minlength=n_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=n_bins)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return CalibrationCurve(
        bin_lower=edges[:-1][keep],
        bin_upper=edges[1:][keep],
        confidence=conf_sum[keep] / count[keep],
        accuracy=acc_sum[keep] / count[keep],
        count=count[keep],
    )


def ece(pred, labels, n_bins: int = 20) -> float:
    """Expected calibration error: count-weighted mean of ``|accuracy - confidence|``."""
    c = calibration_curve(pred, labels, n_bins)
    n = c.count.sum()
    return float(np.sum(c.count / n * np.abs(c.accuracy - c.confidence)))


def agreement(p_ref, p) -> float:
    """Fraction of inputs whose top-1 classes coincide (lowest index wins ties)."""
    a, b = _as_probs(p_ref), _as_probs(p)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.argmax(a, axis=1) == np.argmax(b, axis=1)))


def total_variation(p_ref, p) -> float:
    """Mean over inputs of half the L1 distance between predictive rows."""
    a, b = _as_probs(p_ref), _as_probs(p)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(0.5 * np.abs(a - b).sum(axis=1)))


@dataclass
class EntropySummary:
    entropies: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist(),
                "mean": float(self.entropies.mean())}


def predictive_entropy(pred, n_bins: int = 20) -> EntropySummary:
    """Per-input entropy (nats) with a histogram on ``[0, log C]``."""
    p = _as_probs(pred)
    h = entr(p).sum(axis=1)
    edges = np.linspace(0.0, math.log(p.shape[1]), n_bins + 1)
    counts, _ = np.histogram(np.clip(h, 0.0, edges[-1]), bins=edges)
    return EntropySummary(h, edges, counts)


def ood_auc_roc(conf_in, conf_out) -> float:
    """P(in-distribution confidence > OOD confidence), ties counting one half."""
    a = np.asarray(conf_in, dtype=np.float64).ravel()
    b = np.asarray(conf_out, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both confidence sets must be non-empty")
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[:a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def true_class_trace(samples, model: ModelSpec, x, label: int) -> np.ndarray:
    """Probability each sample assigns to ``label`` at a single input ``x``."""
    w = stack_samples(samples)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return np.array([predict_probs(model, row, x)[0, label] for row in w])


# --- export -----------------------------------------------------------------


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, rows: list[dict], fieldnames=None) -> Path:
    """Write dict rows with shortest round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def classification_metrics(pred: PredictiveDistribution, labels, n_bins: int = 20) -> dict:
    return {"accuracy": accuracy(pred, labels), "nll": nll(pred, labels),
            "ece": ece(pred, labels, n_bins)}


def regression_metrics(pred: PredictiveDistribution, targets, scale: float = 1.0) -> dict:
    return {"rmse": rmse(pred, targets, scale), "test_ll": gaussian_test_ll(pred, targets, scale)}


def comparison_metrics(p_ref, p) -> dict:
    return {"agreement": agreement(p_ref, p), "total_variation": total_variation(p_ref, p)}
