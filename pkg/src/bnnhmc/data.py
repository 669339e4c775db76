"""Datasets: synthetic regression, UCI tables, vectorized classification files.

Vectorized classification container (little-endian)::

    uint64 n, uint64 d, uint64 num_classes
    float64[n * d]     inputs, row-major
    uint16[n]          labels
"""

from __future__ import annotations

import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import _rng
from .exceptions import DataFormatError
from .model import Dataset, ModelSpec, forward, param_count

UCI_DATASETS = ("concrete", "yacht", "energy", "boston", "naval")
_VEC_HEADER = struct.Struct("<QQQ")


@dataclass(frozen=True)
class SyntheticRegressionConfig:
    """1-D regression task labelled by a random teacher network on ``(x, x^2)``."""

    intervals: tuple = ((-10.0, -6.0), (6.0, 10.0), (14.0, 18.0))
    points_per_interval: int = 40
    teacher_widths: tuple = (100, 100, 100)
    teacher_std: float = 0.1
    noise_std: float = 0.02
    activation: str = "swish"
    standardize_features: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "intervals", tuple((float(a), float(b)) for a, b in self.intervals))
        object.__setattr__(self, "teacher_widths", tuple(int(h) for h in self.teacher_widths))
        if any(b <= a for a, b in self.intervals):
            raise ValueError("each interval needs lo < hi")
        if self.points_per_interval < 1:
            raise ValueError("points_per_interval must be positive")
        if not self.teacher_std > 0:
            raise ValueError("teacher_std must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["intervals"] = [list(iv) for iv in self.intervals]
        d["teacher_widths"] = list(self.teacher_widths)
        return d

    def model_spec(self, noise_std: float | None = None) -> ModelSpec:
        """Network of the teacher's shape with a fixed-noise Gaussian head."""
        return ModelSpec(2, self.teacher_widths, self.activation, "regression",
                         noise_std=noise_std if noise_std is not None else (self.noise_std or 1.0))

    def train_x(self) -> np.ndarray:
        return np.concatenate([np.linspace(a, b, self.points_per_interval)
                               for a, b in self.intervals])

    def feature_map(self) -> "FeatureMap":
        """Z-scoring of ``(x, x^2)`` with training-grid statistics, if enabled."""
        if not self.standardize_features:
            return FeatureMap()
        raw = FeatureMap()(self.train_x())
        return FeatureMap(tuple(float(v) for v in raw.mean(axis=0)),
                          tuple(float(v) for v in raw.std(axis=0)))


def synthetic_features(x, cfg: SyntheticRegressionConfig | None = None) -> np.ndarray:
    """Network inputs for scalar ``x`` under ``cfg``'s feature map (raw ``(x, x^2)`` if None)."""
    fmap = FeatureMap() if cfg is None else cfg.feature_map()
    return fmap(x)


@dataclass(frozen=True)
class FeatureMap:
    """``x -> ((x, x^2) - shift) / scale``; the default shift and scale give raw features."""

    shift: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        return (np.stack([x, x * x], axis=1) - np.array(self.shift)) / np.array(self.scale)


class TeacherFunction:
    """Noise-free ground truth ``f(x)`` of a synthetic task."""

    def __init__(self, spec: ModelSpec, params: np.ndarray, features: FeatureMap = FeatureMap()):
        self.spec = spec
        self.params = params
        self.features = features

    def __call__(self, x) -> np.ndarray:
        return forward(self.spec, self.params, self.features(x))[:, 0]


def gen_synthetic_regression(cfg: SyntheticRegressionConfig = SyntheticRegressionConfig()):
    """Training set on uniform grids over ``cfg.intervals`` and the teacher function.

    Teacher and training inputs share ``cfg.feature_map()``; the scalar
    inputs are kept in ``meta["x"]``.
    """
    x = cfg.train_x()
    spec = cfg.model_spec()
    fmap = cfg.feature_map()
    teacher = TeacherFunction(spec, cfg.teacher_std * _rng.stream(cfg.seed, 0).standard_normal(
        param_count(spec)), fmap)
    y = teacher(x)
    if cfg.noise_std > 0:
        y = y + cfg.noise_std * _rng.stream(cfg.seed, 1).standard_normal(x.size)
    data = Dataset(fmap(x), y, name="synthetic", meta={"x": x, "config": cfg.to_dict()})
    return data, teacher


# --- UCI ---------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Standardizer:
    """Train-set z-scoring of inputs and targets, with the inverse maps."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @classmethod
    def fit(cls, x, y=None) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        xs = x.std(axis=0)
        # constant columns are centred but not scaled
        xs = np.where(xs > 0, xs, 1.0)
        if y is None:
            return cls(x.mean(axis=0), xs)
        y = np.asarray(y, dtype=np.float64)
        ys = float(y.std())
        return cls(x.mean(axis=0), xs, float(y.mean()), ys if ys > 0 else 1.0)

    def transform_x(self, x):
        return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std

    def inverse_x(self, z):
        return np.asarray(z) * self.x_std + self.x_mean

    def transform_y(self, y):
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def inverse_y(self, z):
        return np.asarray(z) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {"x_mean": self.x_mean.tolist(), "x_std": self.x_std.tolist(),
                "y_mean": self.y_mean, "y_std": self.y_std}


def read_table(path, delimiter: str | None = None) -> np.ndarray:
    """Parse a numeric table; blank lines and ``#`` comments are skipped."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            cells = text.split(delimiter)
            try:
                row = [float(c) for c in cells]
            except ValueError as err:
                raise DataFormatError(f"{path}:{lineno}: non-numeric cell ({err})") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            if not all(math.isfinite(v) for v in row):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            rows.append(row)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    if width < 2:
        raise DataFormatError(f"{path}: need at least one feature column and a target column")
    return np.array(rows)


def split_indices(n: int, split: SplitSpec):
    perm = _rng.stream(split.seed, split.index).permutation(n)
    n_train = int(math.floor(split.train_fraction * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split of {n} rows leaves an empty train or test set")
    return perm[:n_train], perm[n_train:]


def load_uci(path, split: SplitSpec = SplitSpec(), delimiter: str | None = None,
             name: str | None = None):
    """Train/test split of a UCI table, z-scored with train statistics.

    Returns ``(train, test)``; both carry the fitted :class:`Standardizer`
    in ``meta["standardizer"]`` for converting metrics back to original units.
    """
    table = read_table(path, delimiter)
    x, y = table[:, :-1], table[:, -1]
    tr, te = split_indices(table.shape[0], split)
    st = Standardizer.fit(x[tr], y[tr])
    name = name or Path(path).stem
    meta = {"standardizer": st, "split": asdict(split), "train_index": tr, "test_index": te}
    train = Dataset(st.transform_x(x[tr]), st.transform_y(y[tr]), name, dict(meta))
    test = Dataset(st.transform_x(x[te]), st.transform_y(y[te]), name, dict(meta))
    return train, test


def find_uci(name: str, search_dirs) -> Path | None:
    """First ``<dir>/<name>.txt`` (or ``.csv``/``.data``) that exists."""
    for d in search_dirs:
        if d is None:
            continue
        for ext in (".txt", ".csv", ".data"):
            p = Path(d) / f"{name}{ext}"
            if p.is_file():
                return p
    return None


# --- classification ------------------------------------------------------------


def corrupt_gaussian(data: Dataset, sigma: float, seed) -> Dataset:
    """Add i.i.d. ``N(0, sigma^2)`` noise to every input feature; labels untouched."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return Dataset(data.inputs.copy(), data.targets.copy(), data.name, dict(data.meta))
    noise = np.random.default_rng(seed).standard_normal(data.inputs.shape)
    return Dataset(data.inputs + sigma * noise, data.targets.copy(), data.name,
                   {**data.meta, "noise_sigma": sigma})


def write_vectorized(path, data: Dataset, num_classes: int | None = None) -> Path:
    y = np.asarray(data.targets)
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("vectorized container holds integer labels only")
    c = int(num_classes if num_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= c or c > 65536:
        raise ValueError("labels must lie in [0, num_classes) with num_classes <= 65536")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, d = data.inputs.shape
    with open(path, "wb") as fh:
        fh.write(_VEC_HEADER.pack(n, d, c))
        fh.write(data.inputs.astype("<f8", copy=False).tobytes(order="C"))
        fh.write(y.astype("<u2").tobytes())
    return path


def read_vectorized(path, name: str | None = None) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _VEC_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    n, d, c = _VEC_HEADER.unpack_from(raw)
    expected = _VEC_HEADER.size + 8 * n * d + 2 * n
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes for n={n}, d={d}, found {len(raw)}")
    off = _VEC_HEADER.size
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d).astype(np.float64)
    y = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 8 * n * d).astype(np.int64)
    if n and y.max() >= c:
        raise DataFormatError(f"{path}: label {int(y.max())} outside [0, {c})")
    return Dataset(x, y, name or Path(path).stem, {"num_classes": int(c)})


@dataclass(frozen=True)
class DigitsConfig:
    """Subset of the 8x8 digits images, standardised with train statistics."""

    classes: tuple = tuple(range(10))
    n_train: int = 1000
    seed: int = 0


def load_digits_split(cfg: DigitsConfig = DigitsConfig()):
    """``(train, test)`` from scikit-learn's bundled digits images."""
    from sklearn.datasets import load_digits

    x, y = load_digits(return_X_y=True)
    keep = np.isin(y, cfg.classes)
    x, y = x[keep].astype(np.float64), y[keep]
    relabel = {c: i for i, c in enumerate(cfg.classes)}
    y = np.array([relabel[v] for v in y], dtype=np.int64)
    perm = _rng.stream(cfg.seed, 0).permutation(y.size)
    if not 0 < cfg.n_train < y.size:
        raise ValueError(f"n_train must lie in (0, {y.size})")
    tr, te = perm[:cfg.n_train], perm[cfg.n_train:]
    st = Standardizer.fit(x[tr])
    meta = {"num_classes": len(cfg.classes), "standardizer": st}
    return (Dataset(st.transform_x(x[tr]), y[tr], "digits", dict(meta)),
            Dataset(st.transform_x(x[te]), y[te], "digits", dict(meta)))
