"""Gelman-Rubin R-hat in weight and function space, marginal scales, burn-in traces."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluate
from .model import ModelSpec, predict_gaussian, predict_probs
from .store import stack_samples

#: Interior edges of the report histogram; values below 1.0 fall in the first bin.
RHAT_EDGES = (1.0, 1.1, 1.5, 5.0)
RHAT_BIN_LABELS = ("<1.0", "1.0-1.1", "1.1-1.5", "1.5-5", ">=5")


def rhat(chains) -> np.ndarray | float:
    """Potential scale reduction of ``chains`` shaped ``(M, N, ...)``.

    Trailing axes are independent quantities.  With ``W`` the mean
    within-chain variance and ``B/N`` the variance of the chain means::

        sigma2 = (N - 1)/N * W + B/N
        R = (M + 1)/M * sigma2 / W - (N - 1)/(M N)

    Quantities whose chains are all internally constant (``W = 0``) get NaN,
    the "undefined" sentinel.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim < 2:
        raise ValueError("chains must have shape (M, N, ...)")
    m, n = x.shape[:2]
    if m < 2 or n < 2:
        raise ValueError(f"need at least 2 chains of length 2, got M={m}, N={n}")
    chain_mean = x.mean(axis=1)
    b_over_n = chain_mean.var(axis=0, ddof=1)
    within = x.var(axis=1, ddof=1)
    # exact zero for constant chains, whatever the rounding of the mean
    within = np.where(x.max(axis=1) == x.min(axis=1), 0.0, within)
    w = within.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = (n - 1) / n * w + b_over_n
        r = (m + 1) / m * sigma2 / w - (n - 1) / (m * n)
    r = np.where(w > 0, r, np.nan)
    return float(r) if r.ndim == 0 else r


def _histogram(values: np.ndarray) -> dict:
    defined = values[~np.isnan(values)]
    idx = np.searchsorted(RHAT_EDGES, defined, side="right")
    counts = np.bincount(idx, minlength=len(RHAT_BIN_LABELS))
    out = {label: int(c) for label, c in zip(RHAT_BIN_LABELS, counts)}
    out["undefined"] = int(np.isnan(values).sum())
    return out


@dataclass
class RhatReport:
    """R-hat per quantity with the banded histogram used for reporting.

    ``values`` is flat; ``shape`` records the logical layout (e.g.
    ``(n_inputs, n_classes)`` for function space).  ``aggregates`` holds
    additional per-group reductions such as the per-input maximum.
    """

    values: np.ndarray
    space: str = "weights"
    shape: tuple = ()
    aggregates: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not self.shape:
            self.shape = (self.values.size,)

    @property
    def histogram(self) -> dict:
        return _histogram(self.values)

    @property
    def n_undefined(self) -> int:
        return int(np.isnan(self.values).sum())

    @property
    def fraction_below(self) -> float:
        """Fraction of defined values below 1.1."""
        d = self.values[~np.isnan(self.values)]
        return float(np.mean(d < 1.1)) if d.size else float("nan")

    @property
    def fraction_above(self) -> float:
        """Fraction of defined values at or above 1.1."""
        d = self.values[~np.isnan(self.values)]
        return float(np.mean(d >= 1.1)) if d.size else float("nan")

    def summary(self) -> dict:
        d = self.values[~np.isnan(self.values)]
        out = {
            "space": self.space,
            "shape": list(self.shape),
            "count": int(self.values.size),
            "undefined": self.n_undefined,
            "fraction_below_1.1": self.fraction_below,
            "fraction_at_least_1.1": self.fraction_above,
            "histogram": self.histogram,
            "histogram_bins": list(RHAT_BIN_LABELS),
            "histogram_y_scale": "log",
            "median": float(np.median(d)) if d.size else None,
            "max": float(d.max()) if d.size else None,
        }
        for name, vals in self.aggregates.items():
            out[name] = {"histogram": _histogram(np.asarray(vals)),
                         "fraction_below_1.1": RhatReport(vals).fraction_below}
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "rhat"])
            for i, v in enumerate(self.values):
                writer.writerow([i, "undefined" if math.isnan(v) else repr(float(v))])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return path


def _chain_stack(stores) -> np.ndarray:
    arrays = [stack_samples(s) for s in stores]
    if len(arrays) < 2:
        raise ValueError("R-hat needs at least two chains")
    lengths = {a.shape for a in arrays}
    if len(lengths) != 1:
        raise ValueError(f"chains must have identical (K, d) shapes, got {sorted(lengths)}")
    return np.stack(arrays)


def rhat_weights(stores) -> RhatReport:
    """One R-hat per parameter coordinate."""
    return RhatReport(rhat(_chain_stack(stores)), space="weights")


def function_values(samples, model: ModelSpec, inputs) -> np.ndarray:
    """Per-sample predictions ``(K, n, C)``: softmax probabilities, or ``(mean, std)``."""
    w = stack_samples(samples)
    if model.head == "classification":
        return np.stack([predict_probs(model, row, inputs) for row in w])
    return np.stack([np.stack(predict_gaussian(model, row, inputs), axis=1) for row in w])


def rhat_functions(stores, model: ModelSpec, inputs) -> RhatReport:
    """One R-hat per (input, class) predicted probability.

    The per-input maximum over classes is added under ``aggregates``.  For
    regression heads the two "classes" are the predictive mean and std.
    """
    if len(stores) < 2:
        raise ValueError("R-hat needs at least two chains")
    vals = np.stack([function_values(s, model, inputs) for s in stores])
    r = rhat(vals)
    per_input = np.where(np.isnan(r).all(axis=1), np.nan, np.nanmax(
        np.where(np.isnan(r), -np.inf, r), axis=1))
    return RhatReport(r.ravel(), space="functions", shape=r.shape,
                      aggregates={"per_input_max": per_input})


@dataclass
class MarginalScales:
    std: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    n_zero: int

    def to_dict(self) -> dict:
        return {"bin_edges": self.bin_edges.tolist(), "counts": self.counts.tolist(),
                "n_zero": self.n_zero, "median_std": float(np.median(self.std))}


def marginal_std(store, n_bins: int = 30) -> MarginalScales:
    """Per-parameter sample std with a log-spaced histogram of the non-zero values."""
    w = stack_samples(store)
    std = w.std(axis=0, ddof=1) if w.shape[0] > 1 else np.zeros(w.shape[1])
    std = np.where(w.max(axis=0) == w.min(axis=0), 0.0, std)
    pos = std[std > 0]
    if pos.size:
        lo, hi = pos.min(), pos.max()
        if lo == hi:
            lo, hi = lo / 1.01, hi * 1.01
        edges = np.geomspace(lo, hi, n_bins + 1)
        counts, _ = np.histogram(pos, bins=edges)
    else:
        edges, counts = np.zeros(0), np.zeros(0, dtype=np.int64)
    return MarginalScales(std, edges, counts, int((std == 0).sum()))


_METRICS = {
    "accuracy": lambda pred, d: evaluate.accuracy(pred, d.targets),
    "nll": lambda pred, d: evaluate.nll(pred, d.targets),
    "rmse": lambda pred, d: evaluate.rmse(pred, d.targets),
    "test_ll": lambda pred, d: evaluate.gaussian_test_ll(pred, d.targets),
}


def burnin_trace(store, metric, data, grid, model: ModelSpec, window: int = 100) -> list[dict]:
    """Metric as a function of discarded burn-in length.

    For each ``n_bi`` in ``grid``: the BMA metric of samples
    ``n_bi .. n_bi + window - 1`` and the single-sample metric of sample
    ``n_bi``.  ``metric`` is a name (accuracy, nll, rmse, test_ll) or a
    callable ``(PredictiveDistribution, Dataset) -> float``.
    """
    fn = _METRICS[metric] if isinstance(metric, str) else metric
    w = stack_samples(store)
    k = w.shape[0]
    rows = []
    for n_bi in grid:
        n_bi = int(n_bi)
        if n_bi < 0 or n_bi + window > k:
            raise IndexError(f"burn-in {n_bi} with window {window} exceeds the {k} stored samples")
        bma = evaluate.bma_predict(w[n_bi:n_bi + window], model, data.inputs)
        single = evaluate.bma_predict(w[n_bi:n_bi + 1], model, data.inputs)
        rows.append({"n_burnin": n_bi, "bma": fn(bma, data), "single": fn(single, data)})
    return rows
