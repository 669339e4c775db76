"""Tempered log-posterior with a reproducible blocked reduction.

The training set is cut into fixed row blocks.  Each block contributes a
partial log-likelihood and gradient, and the partials are combined with a
fixed pairwise tree.  Shards are contiguous runs of blocks, so the result
is bitwise identical for any shard count or worker scheduling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Dataset, ModelSpec, _check_targets, param_count, value_and_grad_arrays
from .prior import Prior

#: Rows per reduction block.  Changing it changes low-order bits of the sums.
BLOCK_ROWS = 4096


def tree_sum(items):
    """Pairwise sum in a fixed left-to-right tree order."""
    items = list(items)
    if not items:
        raise ValueError("nothing to sum")
    while len(items) > 1:
        paired = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            paired.append(items[-1])
        items = paired
    return items[0]


@dataclass(frozen=True, eq=False)
class Posterior:
    """``p_T(w | D) ∝ (p(D | w) p(w))^(1/T)`` for an MLP, prior and dataset."""

    model: ModelSpec
    prior: Prior
    data: Dataset
    temperature: float = 1.0
    block_rows: int = BLOCK_ROWS
    _targets: np.ndarray = field(init=False, repr=False)
    _blocks: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.data.inputs.shape[1] != self.model.input_dim:
            raise ValueError(
                f"data has {self.data.inputs.shape[1]} features, model expects {self.model.input_dim}")
        if self.block_rows < 1:
            raise ValueError("block_rows must be positive")
        object.__setattr__(self, "_targets", _check_targets(self.model, self.data.targets))
        n = self.data.n
        blocks = tuple(slice(s, min(s + self.block_rows, n)) for s in range(0, n, self.block_rows))
        object.__setattr__(self, "_blocks", blocks)

    @property
    def dim(self) -> int:
        return param_count(self.model)

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def num_blocks(self) -> int:
        return len(self._blocks)

    def with_temperature(self, temperature: float) -> "Posterior":
        return Posterior(self.model, self.prior, self.data, temperature, self.block_rows)

    def _block_partial(self, w, k: int):
        sl = self._blocks[k]
        return value_and_grad_arrays(self.model, w, self.data.inputs[sl], self._targets[sl])

    def _reduce(self, partials):
        if len(partials) == 1:
            return partials[0]
        return tree_sum(p[0] for p in partials), tree_sum(p[1] for p in partials)

    # likelihood / prior pieces, untempered

    def value_and_grad_log_likelihood(self, w):
        w = np.asarray(w, dtype=np.float64)
        return self._reduce([self._block_partial(w, k) for k in range(self.num_blocks)])

    def log_likelihood(self, w) -> float:
        return self.value_and_grad_log_likelihood(w)[0]

    def grad_log_likelihood(self, w) -> np.ndarray:
        return self.value_and_grad_log_likelihood(w)[1]

    def log_prior(self, w) -> float:
        return self.prior.log_prob(w)

    def grad_log_prior(self, w) -> np.ndarray:
        return self.prior.grad_log_prob(w)

    # tempered joint

    def _combine(self, ll, g_ll, w):
        value = (ll + self.prior.log_prob(w)) / self.temperature
        grad = g_ll + self.prior.grad_log_prob(w)
        if self.temperature != 1.0:
            grad /= self.temperature
        return value, grad

    def value_and_grad(self, w):
        """Tempered log-density and gradient in one pass."""
        w = np.asarray(w, dtype=np.float64)
        ll, g_ll = self.value_and_grad_log_likelihood(w)
        return self._combine(ll, g_ll, w)

    def log_density(self, w) -> float:
        return self.value_and_grad(w)[0]

    def grad_log_density(self, w) -> np.ndarray:
        return self.value_and_grad(w)[1]

    def minibatch_grad(self, w, idx) -> np.ndarray:
        """Unbiased tempered gradient from the rows ``idx``, likelihood scaled by ``n/|idx|``."""
        w = np.asarray(w, dtype=np.float64)
        idx = np.asarray(idx)
        _, g_ll = value_and_grad_arrays(self.model, w, self.data.inputs[idx], self._targets[idx])
        scale = self.n / idx.shape[0]
        if scale != 1.0:
            g_ll *= scale
        g = g_ll + self.prior.grad_log_prob(w)
        if self.temperature != 1.0:
            g /= self.temperature
        return g


def log_density(post: Posterior, w) -> float:
    return post.log_density(w)


def grad_log_density(post: Posterior, w) -> np.ndarray:
    return post.grad_log_density(w)


def shard_blocks(num_blocks: int, num_shards: int) -> list[list[int]]:
    """Contiguous groups of block indices; never produces an empty shard."""
    if num_shards < 1:
        raise ValueError("num_shards must be at least 1")
    k = min(num_shards, num_blocks)
    return [list(map(int, g)) for g in np.array_split(np.arange(num_blocks), k)]


def sharded_value_and_grad(post: Posterior, w, num_shards: int, executor=None):
    """Tempered ``(log_density, grad)`` with shards evaluated concurrently.

    Shards are groups of whole reduction blocks.  When there are fewer blocks
    than shards, the surplus shards are dropped rather than padded.
    """
    w = np.asarray(w, dtype=np.float64)
    shards = shard_blocks(post.num_blocks, num_shards)

    def run(shard):
        return [post._block_partial(w, k) for k in shard]

    if len(shards) == 1:
        results = [run(shards[0])]
    elif executor is not None:
        results = list(executor.map(run, shards))
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(run, shards))
    partials = [p for shard_result in results for p in shard_result]
    ll, g_ll = post._reduce(partials)
    return post._combine(ll, g_ll, w)
