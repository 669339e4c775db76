"""Posterior sample storage and the ``BNNS`` binary format.

Layout of a ``.bnns`` file (all little-endian)::

    b"BNNS"            4-byte magic
    uint32             format version
    uint64             parameter count d
    uint64             sample count K
    float64[K * d]     samples, row-major (one row per sample)

A JSON sidecar at ``<path>.json`` carries the chain id, config snapshot,
seed and per-iteration accept history.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"BNNS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


@dataclass
class SampleStore:
    """Ordered posterior samples of one chain (or one method run).

    ``samples`` is a ``(K, d)`` array.  ``accept_probs`` and ``accepted``
    are per stored iteration; methods without an accept step leave them empty.
    """

    samples: np.ndarray
    chain_id: int = 0
    accept_probs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    config: dict = field(default_factory=dict)
    seed: int | None = None
    method: str = "hmc"
    log_densities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2:
            raise ValueError(f"samples must be 2-D (K, d), got shape {s.shape}")
        if not np.isfinite(s).all():
            raise ValueError("stored samples must be finite")
        self.samples = np.ascontiguousarray(s)
        self.accept_probs = np.asarray(self.accept_probs, dtype=np.float64)
        self.accepted = np.asarray(self.accepted, dtype=bool)
        self.log_densities = np.asarray(self.log_densities, dtype=np.float64)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def num_params(self) -> int:
        return self.samples.shape[1]

    @property
    def accept_rate(self) -> float:
        if self.accepted.size == 0:
            return float("nan")
        return float(self.accepted.mean())

    def sidecar(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "method": self.method,
            "chain_id": self.chain_id,
            "seed": self.seed,
            "num_params": self.num_params,
            "num_samples": len(self),
            "accept_rate": None if self.accepted.size == 0 else self.accept_rate,
            "accept_probs": self.accept_probs.tolist(),
            "accepted": self.accepted.astype(int).tolist(),
            "log_densities": self.log_densities.tolist(),
            "config": self.config,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        k, d = self.samples.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, d, k))
            fh.write(self.samples.astype("<f8", copy=False).tobytes(order="C"))
        sidecar_path(path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "SampleStore":
        path = Path(path)
        samples = read_samples(path)
        meta = {}
        if sidecar_path(path).exists():
            meta = json.loads(sidecar_path(path).read_text())
        return cls(
            samples=samples,
            chain_id=meta.get("chain_id", 0),
            accept_probs=np.asarray(meta.get("accept_probs", []), dtype=np.float64),
            accepted=np.asarray(meta.get("accepted", []), dtype=bool),
            config=meta.get("config", {}),
            seed=meta.get("seed"),
            method=meta.get("method", "hmc"),
            log_densities=np.asarray(meta.get("log_densities", []), dtype=np.float64),
        )


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_samples(path) -> np.ndarray:
    """Read only the sample matrix of a ``.bnns`` file."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, d, k = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * d * k:
        raise ValueError(f"{path}: expected {8 * d * k} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(k, d).astype(np.float64)


def stack_samples(stores) -> np.ndarray:
    """Pool one or more stores (or raw arrays) into a single ``(K, d)`` array."""
    if isinstance(stores, SampleStore):
        return stores.samples
    if isinstance(stores, np.ndarray):
        return stores[None, :] if stores.ndim == 1 else stores
    parts = []
    for s in stores:
        if isinstance(s, SampleStore):
            parts.append(s.samples)
        else:
            a = np.asarray(s, dtype=np.float64)
            parts.append(a[None, :] if a.ndim == 1 else a)
    return np.concatenate(parts, axis=0)
