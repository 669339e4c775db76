"""Full-batch Hamiltonian Monte Carlo with an identity mass matrix.

A target is any object with ``value_and_grad(w) -> (log_density, grad)``;
:class:`~bnnhmc.posterior.Posterior` is the usual one.  Targets that also
expose ``prior`` can initialise chains by drawing from it.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng
from .exceptions import NonFiniteError
from .store import SampleStore

logger = logging.getLogger(__name__)


def suggest_trajectory_length(prior_std: float) -> float:
    """Trajectory length ``pi * prior_std / 2``: a quarter period of the prior's oscillator."""
    if not prior_std > 0:
        raise ValueError(f"prior_std must be positive, got {prior_std}")
    return math.pi * prior_std / 2.0


def num_leapfrog_steps(trajectory_length: float, step_size: float) -> int:
    return max(1, int(round(trajectory_length / step_size)))


@dataclass(frozen=True)
class HmcConfig:
    trajectory_length: float
    step_size: float
    n_burnin: int = 0
    n_samples: int = 1
    n_chains: int = 1
    seed: int = 0

    def __post_init__(self):
        if not self.trajectory_length > 0:
            raise ValueError("trajectory_length must be positive")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_burnin < 0:
            raise ValueError("n_burnin must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    @property
    def n_leapfrog(self) -> int:
        return num_leapfrog_steps(self.trajectory_length, self.step_size)

    def to_dict(self) -> dict:
        return {**asdict(self), "n_leapfrog": self.n_leapfrog}


@dataclass
class ChainState:
    w: np.ndarray
    log_density: float
    grad: np.ndarray
    iteration: int = 0
    accept_history: list = field(default_factory=list)


class GaussianTarget:
    """Isotropic ``N(0, std^2 I)``; the reference target for sampler checks."""

    def __init__(self, std: float = 1.0, dim: int = 1):
        self.std = float(std)
        self.dim = int(dim)
        self._inv_var = 1.0 / (self.std * self.std)

    def value_and_grad(self, w):
        w = np.asarray(w, dtype=np.float64)
        return -0.5 * self._inv_var * float(w @ w), -self._inv_var * w


class CallableTarget:
    """Wrap separate ``log_density(w)`` and ``grad(w)`` callables."""

    def __init__(self, log_density, grad, dim: int):
        self._f = log_density
        self._g = grad
        self.dim = int(dim)

    def value_and_grad(self, w):
        return float(self._f(w)), np.asarray(self._g(w), dtype=np.float64)


def leapfrog(w, m, step_size: float, n_steps: int, target, start=None):
    """Integrate Hamiltonian dynamics for ``n_steps`` leapfrog steps.

    Adjacent half-kicks are fused into one full kick.  ``start`` may carry the
    already-known ``(log_density, grad)`` at ``w`` to save an evaluation.

    Returns:
        ``(w, m, log_density, grad)`` at the end of the trajectory.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    w = np.array(w, dtype=np.float64)
    m = np.array(m, dtype=np.float64)
    f, g = target.value_and_grad(w) if start is None else start
    m += (0.5 * step_size) * g
    for i in range(n_steps):
        w += step_size * m
        f, g = target.value_and_grad(w)
        if not math.isfinite(f):
            raise NonFiniteError(f"log-density became {f} at leapfrog step {i + 1}/{n_steps}")
        m += (step_size if i < n_steps - 1 else 0.5 * step_size) * g
    if not (np.isfinite(w).all() and np.isfinite(m).all()):
        raise NonFiniteError("non-finite position or momentum after leapfrog")
    return w, m, f, g


def accept_probability(f_old: float, f_new: float, m_old, m_new) -> float:
    """Metropolis-Hastings acceptance ``min(1, exp(-(H_new - H_old)))``."""
    log_ratio = (f_new - f_old) + 0.5 * float(np.dot(m_old, m_old)) - 0.5 * float(np.dot(m_new, m_new))
    if math.isnan(log_ratio):
        return 0.0
    if log_ratio >= 0:
        return 1.0
    return math.exp(log_ratio)


def hmc_step(state: ChainState, config: HmcConfig, target, rng, correct: bool = True):
    """One HMC iteration: fresh momentum, leapfrog proposal, optional MH test.

    With ``correct=False`` (burn-in) every finite proposal is taken.
    Returns the new state and the sample to store (the current ``w`` after
    the accept/reject decision).
    """
    m0 = rng.standard_normal(state.w.shape[0])
    try:
        w1, m1, f1, g1 = leapfrog(state.w, m0, config.step_size, config.n_leapfrog, target,
                                  start=(state.log_density, state.grad))
    except NonFiniteError as err:
        warnings.warn(f"iteration {state.iteration}: proposal rejected ({err})", RuntimeWarning)
        p_accept, accept = 0.0, False
        if correct:
            rng.uniform()
    else:
        p_accept = accept_probability(state.log_density, f1, m0, m1)
        accept = (rng.uniform() <= p_accept) if correct else True
    history = state.accept_history
    history.append((p_accept, bool(accept)))
    if accept:
        new = ChainState(w1, f1, g1, state.iteration + 1, history)
    else:
        new = ChainState(state.w, state.log_density, state.grad, state.iteration + 1, history)
    return new, new.w


def _initial_point(target, rng, init, chain_index):
    if init is None:
        prior = getattr(target, "prior", None)
        if prior is None:
            raise ValueError("target has no prior; pass an explicit init")
        return prior.sample(target.dim, rng)
    if callable(init):
        return np.asarray(init(chain_index), dtype=np.float64)
    return np.array(init, dtype=np.float64)


def _describe(target) -> dict:
    out = {}
    for name in ("model", "prior", "temperature"):
        v = getattr(target, name, None)
        if v is None:
            continue
        out[name] = v.to_dict() if hasattr(v, "to_dict") else v
    data = getattr(target, "data", None)
    if data is not None:
        out["data"] = {"name": data.name, "n": data.n}
    return out


def run_chain(config: HmcConfig, target, init=None, chain_index: int = 0) -> SampleStore:
    """Burn-in without MH correction, then ``n_samples`` corrected iterations.

    Every sampling iteration stores the current position, so a rejection
    repeats the previous sample.
    """
    rng = _rng.stream(config.seed, chain_index)
    w = _initial_point(target, rng, init, chain_index)
    try:
        f, g = target.value_and_grad(w)
    except NonFiniteError as err:
        raise NonFiniteError(f"chain {chain_index}: initial point has {err}") from err
    if not math.isfinite(f):
        raise NonFiniteError(f"chain {chain_index}: initial log-density is {f}")
    state = ChainState(w, f, g)

    for i in range(config.n_burnin):
        state, _ = hmc_step(state, config, target, rng, correct=False)
        logger.debug("chain %d burn-in %d/%d log-density %.6g",
                     chain_index, i + 1, config.n_burnin, state.log_density)
    burn = len(state.accept_history)

    d = w.shape[0]
    samples = np.empty((config.n_samples, d))
    log_dens = np.empty(config.n_samples)
    for k in range(config.n_samples):
        state, sample = hmc_step(state, config, target, rng, correct=True)
        samples[k] = sample
        log_dens[k] = state.log_density
        logger.debug("chain %d sample %d/%d p_accept %.3f",
                     chain_index, k + 1, config.n_samples, state.accept_history[-1][0])
    hist = state.accept_history[burn:]
    store = SampleStore(
        samples=samples,
        chain_id=chain_index,
        accept_probs=np.array([p for p, _ in hist]),
        accepted=np.array([a for _, a in hist], dtype=bool),
        config={"hmc": config.to_dict(), **_describe(target),
                "burnin_accept_probs": [p for p, _ in state.accept_history[:burn]]},
        seed=config.seed,
        method="hmc",
        log_densities=log_dens,
    )
    logger.info("chain %d done: accept rate %.3f", chain_index, store.accept_rate)
    return store


class ChainsFailedError(RuntimeError):
    """Some chains failed; ``stores`` holds the others (``None`` where failed)."""

    def __init__(self, stores, errors):
        self.stores = stores
        self.errors = errors
        detail = "; ".join(f"chain {i}: {e}" for i, e in errors.items())
        super().__init__(f"{len(errors)} chain(s) failed: {detail}")


def run_chains(config: HmcConfig, target, init=None, workers: int | None = None) -> list[SampleStore]:
    """Run ``config.n_chains`` independent chains concurrently.

    Chain ``i`` uses RNG stream ``(seed, i)`` and its own initial point, so
    results do not depend on ``workers`` or scheduling.  ``init`` may be
    ``None`` (draw from the prior), one array per chain, or a callable
    ``chain_index -> array``.
    """
    n = config.n_chains
    if init is not None and not callable(init):
        arr = np.asarray(init, dtype=np.float64)
        if arr.ndim == 1:
            raise ValueError("pass one initial vector per chain, or a callable")
        if arr.shape[0] != n:
            raise ValueError(f"got {arr.shape[0]} initial vectors for {n} chains")
        init = (lambda a: (lambda i: a[i]))(arr)

    def one(i):
        return run_chain(config, target, init=init, chain_index=i)

    results: list = [None] * n
    errors = {}
    if n == 1 or workers == 1:
        for i in range(n):
            try:
                results[i] = one(i)
            except Exception as err:  # isolate per-chain failures
                errors[i] = err
    else:
        with ThreadPoolExecutor(max_workers=workers or n) as pool:
            futures = {i: pool.submit(one, i) for i in range(n)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except Exception as err:
                    errors[i] = err
    if errors:
        raise ChainsFailedError(results, errors)
    return results
