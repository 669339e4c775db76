"""Two-dimensional affine slices of weight space through three samples.

The slice is ``w(a, b) = w1 + a u + b v`` with ``u, v`` the Gram-Schmidt
orthonormalisation of ``w2 - w1`` and ``w3 - w1``.  Grids are row-major:
``field[i, j]`` is evaluated at ``(a_values[j], b_values[i])``, so rows
follow ``b`` and columns follow ``a``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluate import write_csv
from .exceptions import DegenerateSubspaceError, NonFiniteError
from .posterior import Posterior

#: Relative residual below which the third anchor counts as collinear.
DEGENERACY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SubspaceBasis:
    origin: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray
    u: np.ndarray
    v: np.ndarray
    coords_w2: tuple[float, float]
    coords_w3: tuple[float, float]

    def point(self, a: float, b: float) -> np.ndarray:
        return self.origin + a * self.u_hat + b * self.v_hat

    def project(self, w) -> tuple[float, float]:
        d = np.asarray(w, dtype=np.float64) - self.origin
        return float(d @ self.u_hat), float(d @ self.v_hat)

    @property
    def anchor_coords(self) -> list[tuple[float, float]]:
        return [(0.0, 0.0), self.coords_w2, self.coords_w3]


def build_subspace(w1, w2, w3) -> SubspaceBasis:
    """Orthonormal basis of the plane through three parameter vectors."""
    w1, w2, w3 = (np.asarray(x, dtype=np.float64) for x in (w1, w2, w3))
    if not (w1.shape == w2.shape == w3.shape) or w1.ndim != 1:
        raise ValueError("anchors must be 1-D vectors of equal length")
    u = w2 - w1
    v = w3 - w1
    nu = np.linalg.norm(u)
    if nu == 0.0:
        raise DegenerateSubspaceError("w1 and w2 coincide")
    u_hat = u / nu
    r = v - (u_hat @ v) * u_hat
    nr = np.linalg.norm(r)
    nv = np.linalg.norm(v)
    if nv == 0.0 or nr <= DEGENERACY_TOL * nv:
        raise DegenerateSubspaceError(
            f"anchors are collinear (residual {nr:.3g} vs |w3 - w1| = {nv:.3g})")
    v_hat = r / nr
    return SubspaceBasis(w1, u_hat, v_hat, u, v,
                         (float(nu), 0.0), (float(u_hat @ v), float(nr)))


def default_ranges(basis: SubspaceBasis, margin: float = 0.2):
    """Bounding box of the anchor coordinates widened by ``margin`` of its size on each side."""
    pts = np.array(basis.anchor_coords)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    span = np.where(span > 0, span, 1.0)
    lo, hi = lo - margin * span, hi + margin * span
    return (float(lo[0]), float(hi[0])), (float(lo[1]), float(hi[1]))


@dataclass
class SubspaceGrid:
    """Fields on an ``R x R`` lattice; NaN marks points that failed to evaluate."""

    basis: SubspaceBasis
    a_values: np.ndarray
    b_values: np.ndarray
    log_likelihood: np.ndarray
    log_prior: np.ndarray
    log_posterior: np.ndarray
    temperature: float

    FIELDS = ("log_likelihood", "log_prior", "log_posterior")

    @property
    def resolution(self) -> int:
        return self.a_values.size

    @property
    def n_failed(self) -> int:
        return int(np.isnan(self.log_posterior).sum())

    def metadata(self) -> dict:
        return {
            "anchors": [list(c) for c in self.basis.anchor_coords],
            "a_range": [float(self.a_values[0]), float(self.a_values[-1])],
            "b_range": [float(self.b_values[0]), float(self.b_values[-1])],
            "resolution": self.resolution,
            "temperature": self.temperature,
            "layout": "field[i, j] at (a_values[j], b_values[i])",
            "fields_scaled_by_inverse_temperature": True,
            "failed_points": self.n_failed,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in self.FIELDS:
            f = getattr(self, name)
            rows = []
            for i, b in enumerate(self.b_values):
                for j, a in enumerate(self.a_values):
                    v = f[i, j]
                    rows.append({"a": float(a), "b": float(b),
                                 "value": "nan" if math.isnan(v) else float(v)})
            write_csv(directory / f"{name}.csv", rows, ["a", "b", "value"])
        (directory / "grid.json").write_text(json.dumps(self.metadata(), indent=2) + "\n")
        return directory


def _evaluate_point(post: Posterior, w):
    """``(ll, lp, joint)`` each divided by the temperature."""
    t = post.temperature
    try:
        ll = post.log_likelihood(w)
    except NonFiniteError:
        return math.nan, math.nan, math.nan
    lp = post.log_prior(w)
    vals = (ll / t, lp / t, (ll + lp) / t)
    return tuple(v if math.isfinite(v) else math.nan for v in vals)


def scan_grid(basis: SubspaceBasis, post: Posterior, resolution: int = 20, ranges=None,
              workers: int | None = None) -> SubspaceGrid:
    """Evaluate tempered log-likelihood, log-prior and log-posterior on the lattice.

    All three fields are divided by the posterior temperature, so the
    log-posterior field equals ``post.log_density`` pointwise.
    """
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    (a0, a1), (b0, b1) = ranges if ranges is not None else default_ranges(basis)
    a_values = np.linspace(a0, a1, resolution)
    b_values = np.linspace(b0, b1, resolution)
    coords = [(i, j) for i in range(resolution) for j in range(resolution)]

    def run(ij):
        i, j = ij
        return _evaluate_point(post, basis.point(a_values[j], b_values[i]))

    if workers == 1:
        results = [run(c) for c in coords]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, coords))
    fields = np.array(results).reshape(resolution, resolution, 3)
    return SubspaceGrid(basis, a_values, b_values, fields[..., 0], fields[..., 1],
                        fields[..., 2], post.temperature)
