"""Fully-connected networks with hand-written reverse-mode gradients.

Parameters live in one flat float64 vector.  The packing is layer-major,
first layer first; inside a layer the weight matrix comes before the bias.
Weight matrices are stored ``(fan_in, fan_out)`` row-major so that a layer
computes ``x @ W + b``.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .exceptions import NonFiniteError

ACTIVATIONS = ("identity", "relu", "swish")
HEADS = ("classification", "regression")

#: Floor added to ``softplus(rho)`` so predictive scales stay strictly positive.
SIGMA_FLOOR = 1e-6

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a multilayer perceptron and its likelihood head.

    ``head="classification"`` emits ``num_classes`` logits.  ``head="regression"``
    emits ``(mu, rho)`` per input with ``sigma = softplus(rho) + 1e-6``, unless
    ``noise_std`` is given, in which case the network has a single output
    (the mean) and the observation noise is fixed.
    """

    input_dim: int
    hidden_widths: tuple[int, ...] = ()
    activation: str = "swish"
    head: str = "classification"
    num_classes: int = 2
    noise_std: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if int(self.input_dim) < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head == "classification" and self.num_classes < 2:
            raise ValueError("classification needs num_classes >= 2")
        if self.noise_std is not None:
            if self.head != "regression":
                raise ValueError("noise_std only applies to the regression head")
            if not self.noise_std > 0:
                raise ValueError("noise_std must be positive")

    @property
    def output_dim(self) -> int:
        if self.head == "classification":
            return self.num_classes
        return 1 if self.noise_std is not None else 2

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_widths, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "activation": self.activation,
            "head": self.head,
            "num_classes": self.num_classes,
            "noise_std": self.noise_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            input_dim=d["input_dim"],
            hidden_widths=tuple(d.get("hidden_widths", ())),
            activation=d.get("activation", "swish"),
            head=d.get("head", "classification"),
            num_classes=d.get("num_classes", 2),
            noise_std=d.get("noise_std"),
        )


@dataclass(frozen=True)
class Dataset:
    """Inputs ``(n, d)`` with integer labels or real targets of length ``n``."""

    inputs: np.ndarray
    targets: np.ndarray
    name: str = "data"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be a non-empty 2-D array, got shape {x.shape}")
        y = np.asarray(self.targets)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError(f"targets must have shape ({x.shape[0]},), got {y.shape}")
        if np.isnan(x).any():
            raise ValueError("inputs contain NaN")
        if np.issubdtype(y.dtype, np.integer):
            y = np.ascontiguousarray(y, dtype=np.int64)
        else:
            y = np.ascontiguousarray(y, dtype=np.float64)
            if np.isnan(y).any():
                raise ValueError("targets contain NaN")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.targets[idx], self.name, dict(self.meta))


def param_count(spec: ModelSpec) -> int:
    """Total number of weights and biases."""
    return sum(i * o + o for i, o in spec.layer_shapes)


def unflatten(spec: ModelSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer ``(W, b)`` views (no copy)."""
    params = np.asarray(params)
    if params.shape != (param_count(spec),):
        raise ValueError(
            f"parameter vector has shape {params.shape}, model expects ({param_count(spec)},)")
    layers = []
    pos = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of :func:`unflatten`."""
    parts = []
    for w, b in layers:
        parts.append(np.asarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def init_params(spec: ModelSpec, scale: float, seed) -> np.ndarray:
    """I.i.d. ``N(0, scale^2)`` draw of every parameter."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal(param_count(spec))


def _swish(z: np.ndarray):
    """``(z * sigmoid(z), 1 + exp(-z))``; the second term is reused by the backward pass."""
    with np.errstate(over="ignore"):
        e = np.exp(-z)
    e += 1.0
    return z / e, e


def _activate(kind: str, z: np.ndarray):
    if kind == "swish":
        return _swish(z)
    if kind == "relu":
        return np.maximum(z, 0.0), None
    return z, None


def forward(spec: ModelSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Raw network outputs ``(n, output_dim)``: logits, ``(mu, rho)`` or ``mu``."""
    a = _check_inputs(spec, inputs)
    layers = unflatten(spec, params)
    for w, b in layers[:-1]:
        a, _ = _activate(spec.activation, a @ w + b)
    w, b = layers[-1]
    return a @ w + b


def predictive_scale(spec: ModelSpec, raw: np.ndarray) -> np.ndarray:
    """Per-input observation std of a regression head."""
    if spec.noise_std is not None:
        return np.full(raw.shape[0], float(spec.noise_std))
    return np.logaddexp(0.0, raw[:, 1]) + SIGMA_FLOOR


def _check_inputs(spec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if spec.input_dim == 1 else x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"inputs have shape {x.shape}, model expects (n, {spec.input_dim})")
    return x


def _head_value_and_grad(spec: ModelSpec, out: np.ndarray, y: np.ndarray):
    """Summed log-likelihood and its gradient with respect to the raw outputs."""
    n = out.shape[0]
    if spec.head == "classification":
        rows = np.arange(n)
        m = out.max(axis=1, keepdims=True)
        e = np.exp(out - m)
        se = e.sum(axis=1)
        lse = m[:, 0] + np.log(se)
        value = float(out[rows, y].sum() - lse.sum())
        d_out = e
        d_out /= -se[:, None]
        d_out[rows, y] += 1.0
        return value, d_out
    mu = out[:, 0]
    r = y - mu
    if spec.noise_std is not None:
        var = float(spec.noise_std) ** 2
        value = float(-0.5 * n * _LOG_2PI - n * math.log(spec.noise_std) - (r @ r) / (2.0 * var))
        return value, (r / var)[:, None]
    rho = out[:, 1]
    sigma = np.logaddexp(0.0, rho) + SIGMA_FLOOR
    z = r / sigma
    value = float(-0.5 * n * _LOG_2PI - np.log(sigma).sum() - 0.5 * (z @ z))
    d_out = np.empty_like(out)
    d_out[:, 0] = z / sigma
    d_out[:, 1] = (z * z - 1.0) / sigma * expit(rho)
    return value, d_out


def _check_targets(spec: ModelSpec, targets) -> np.ndarray:
    y = np.asarray(targets)
    if spec.head == "classification":
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise ValueError("classification targets must be integer labels")
            y = y.astype(np.int64)
        if y.size and (y.min() < 0 or y.max() >= spec.num_classes):
            raise ValueError(f"labels must lie in [0, {spec.num_classes})")
        return y
    return np.asarray(y, dtype=np.float64)


class _Workspace:
    """Scratch buffers for one ``(spec, n)`` shape; reused across evaluations."""

    def __init__(self, spec: ModelSpec, n: int):
        widths = [o for _, o in spec.layer_shapes[:-1]]
        self.z = [np.empty((n, h)) for h in widths]
        self.e = [np.empty((n, h)) for h in widths]
        self.h = [np.empty((n, h)) for h in widths]
        self.d = [np.empty((n, h)) for h in widths]
        self.ones = np.ones(n)


_local = threading.local()
_WORKSPACE_CACHE = 8


def _workspace(spec: ModelSpec, n: int) -> _Workspace:
    # Per-thread, so concurrent evaluations never share buffers.
    cache = getattr(_local, "cache", None)
    if cache is None:
        cache = _local.cache = OrderedDict()
    key = (spec, n)
    ws = cache.get(key)
    if ws is None:
        ws = cache[key] = _Workspace(spec, n)
        if len(cache) > _WORKSPACE_CACHE:
            cache.popitem(last=False)
    else:
        cache.move_to_end(key)
    return ws


def value_and_grad_arrays(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray,
                          targets: np.ndarray, grad_out: np.ndarray | None = None):
    """Summed log-likelihood over ``(inputs, targets)`` and its exact gradient.

    ``grad_out``, if given, is a preallocated flat buffer the gradient is
    written into.  Inputs and targets are assumed already validated.
    """
    layers = unflatten(spec, params)
    if grad_out is None:
        grad_out = np.empty(param_count(spec))
    glayers = unflatten(spec, grad_out)
    ws = _workspace(spec, inputs.shape[0])
    act = spec.activation

    acts = [inputs]
    a = inputs
    for k, (w, b) in enumerate(layers[:-1]):
        z = ws.z[k]
        np.dot(a, w, out=z)
        z += b
        if act == "swish":
            e, a = ws.e[k], ws.h[k]
            with np.errstate(over="ignore"):
                np.negative(z, out=e)
                np.exp(e, out=e)
            e += 1.0
            np.divide(z, e, out=a)
        elif act == "relu":
            a = np.maximum(z, 0.0, out=ws.h[k])
        else:
            a = z
        acts.append(a)
    w, b = layers[-1]
    out = a @ w
    out += b

    value, delta = _head_value_and_grad(spec, out, targets)
    if not math.isfinite(value):
        raise NonFiniteError(f"log-likelihood is {value}")

    for k in range(len(layers) - 1, -1, -1):
        gw, gb = glayers[k]
        np.dot(acts[k].T, delta, out=gw)
        np.dot(ws.ones, delta, out=gb)
        if k == 0:
            break
        d = np.dot(delta, layers[k][0].T, out=ws.d[k - 1])
        z = ws.z[k - 1]
        if act == "swish":
            # d/dz [z * sigmoid(z)] = (1 + z - h) / (1 + exp(-z)); h is dead after this
            t = np.subtract(z, acts[k], out=ws.h[k - 1])
            t += 1.0
            d *= t
            d /= ws.e[k - 1]
        elif act == "relu":
            d *= z > 0
        delta = d
    return value, grad_out


def log_likelihood(spec: ModelSpec, params: np.ndarray, data: Dataset) -> float:
    """Summed log p(y | x, w) over the dataset."""
    x = _check_inputs(spec, data.inputs)
    y = _check_targets(spec, data.targets)
    out = forward(spec, params, x)
    value, _ = _head_value_and_grad(spec, out, y)
    if not math.isfinite(value):
        raise NonFiniteError(f"log-likelihood is {value}")
    return value


def grad_log_likelihood(spec: ModelSpec, params: np.ndarray, data: Dataset) -> np.ndarray:
    """Exact reverse-mode gradient of :func:`log_likelihood`."""
    x = _check_inputs(spec, data.inputs)
    y = _check_targets(spec, data.targets)
    return value_and_grad_arrays(spec, np.asarray(params, dtype=np.float64), x, y)[1]


def predict_probs(spec: ModelSpec, params: np.ndarray, inputs) -> np.ndarray:
    """Softmax class probabilities of a single parameter setting."""
    if spec.head != "classification":
        raise ValueError("predict_probs needs a classification head")
    z = forward(spec, params, inputs)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict_gaussian(spec: ModelSpec, params: np.ndarray, inputs):
    """Predictive ``(mean, std)`` of a single regression parameter setting."""
    if spec.head != "regression":
        raise ValueError("predict_gaussian needs a regression head")
    raw = forward(spec, params, inputs)
    return raw[:, 0].copy(), predictive_scale(spec, raw)
