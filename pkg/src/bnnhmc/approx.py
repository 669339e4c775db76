"""Scalable baselines: SGD, deep ensembles, SGLD, SGHMC and mean-field VI.

All methods work on the summed (not averaged) log-joint, so step sizes are
on the same scale as the HMC step size.  A minibatch gradient rescales the
likelihood term by ``n / |batch|``; with ``batch_size >= n`` the full-batch
gradient of the posterior is used directly.

Update rules (``g`` is the stochastic gradient of the log-posterior):

* SGD:    ``v <- mu v + g;  w <- w + lr v``
* SGLD:   ``w <- w + (eps/2) g + N(0, eps)``
* SGHMC:  ``v <- beta v + (eps/2) G g + N(0, (1 - beta) eps G);  w <- w + v``

``G`` is the identity or an RMSprop preconditioner ``1 / (sqrt(V) + delta)``.
With ``beta = 0`` and no preconditioner SGHMC performs exactly the SGLD
update.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _rng
from .exceptions import NonFiniteError
from .model import param_count, unflatten, value_and_grad_arrays
from .posterior import Posterior
from .prior import GaussianPrior, weight_decay_prior
from .store import SampleStore

logger = logging.getLogger(__name__)

SCHEDULES = ("constant", "cosine", "cyclical")
PRECONDITIONERS = ("none", "rms")


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters shared by the stochastic-gradient methods.

    ``batch_size=None`` means full batch.  ``weight_decay`` (SGD only)
    replaces the posterior's prior by ``N(0, 1/weight_decay)``.  The
    SGMCMC methods keep one sample every ``thin_epochs`` epochs after
    ``n_burnin_epochs``.  ``init_scale=None`` uses a fan-in scaled normal
    initialisation.
    """

    step_size: float
    n_epochs: int = 1
    batch_size: int | None = None
    schedule: str = "constant"
    n_cycles: int = 1
    momentum: float = 0.0
    weight_decay: float | None = None
    seed: int = 0
    preconditioner: str = "none"
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    n_burnin_epochs: int = 0
    thin_epochs: int = 10
    init_scale: float | None = None
    vi_init_variance: float = 1e-2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.n_cycles < 1:
            raise ValueError("n_cycles must be at least 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay is not None and not self.weight_decay > 0:
            raise ValueError("weight_decay must be positive")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")
        if not 0.0 <= self.rms_decay < 1.0:
            raise ValueError("rms_decay must lie in [0, 1)")
        if self.n_burnin_epochs < 0 or self.thin_epochs < 1:
            raise ValueError("need n_burnin_epochs >= 0 and thin_epochs >= 1")
        if self.init_scale is not None and not self.init_scale > 0:
            raise ValueError("init_scale must be positive")
        if not self.vi_init_variance > 0:
            raise ValueError("vi_init_variance must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_lr(t, total, base: float) -> float:
    """``base * (1 + cos(pi t / total)) / 2``."""
    if total <= 0:
        raise ValueError("total must be positive")
    return base * 0.5 * (1.0 + math.cos(math.pi * t / total))


def cyclical_lr(t, total, n_cycles: int, base: float) -> float:
    """Cosine schedule restarted ``n_cycles`` times over ``total`` steps."""
    if total <= 0 or n_cycles < 1:
        raise ValueError("need total > 0 and n_cycles >= 1")
    cycle = math.ceil(total / n_cycles)
    frac = (t % cycle) / cycle
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


def learning_rate(config: TrainConfig, t: int, total: int) -> float:
    if config.schedule == "cosine":
        return cosine_lr(t, total, config.step_size)
    if config.schedule == "cyclical":
        return cyclical_lr(t, total, config.n_cycles, config.step_size)
    return config.step_size


def epoch_batches(rng, n: int, batch_size: int | None) -> list:
    """Index arrays for one epoch; ``None`` stands for the full dataset."""
    if batch_size is None or batch_size >= n:
        return [None]
    perm = rng.permutation(n)
    return np.array_split(perm, math.ceil(n / batch_size))


def _batches_per_epoch(n: int, batch_size: int | None) -> int:
    if batch_size is None or batch_size >= n:
        return 1
    return math.ceil(n / batch_size)


def _check_batch(config: TrainConfig, post: Posterior):
    if config.batch_size is not None and config.batch_size > post.n:
        raise ValueError(f"batch_size {config.batch_size} exceeds dataset size {post.n}")


def stochastic_grad(post: Posterior, w, idx) -> np.ndarray:
    """Unbiased log-posterior gradient; ``idx=None`` is the exact full-batch gradient."""
    if idx is None:
        return post.grad_log_density(w)
    return post.minibatch_grad(w, idx)


def fan_in_init(spec, rng, scale: float | None = None) -> np.ndarray:
    """Normal init with std ``1/sqrt(fan_in)`` on weights, zero biases.

    With ``scale`` given, every parameter is drawn i.i.d. ``N(0, scale^2)``.
    """
    if scale is not None:
        return scale * rng.standard_normal(param_count(spec))
    w = np.zeros(param_count(spec))
    for W, _ in unflatten(spec, w):
        W[...] = rng.standard_normal(W.shape) / math.sqrt(W.shape[0])
    return w


def _start(config: TrainConfig, post: Posterior, rng, init):
    if init is not None:
        w = np.array(init, dtype=np.float64)
        if w.shape != (post.dim,):
            raise ValueError(f"init has shape {w.shape}, expected ({post.dim},)")
        return w
    return fan_in_init(post.model, rng, config.init_scale)


def _diverged(method, epoch, step):
    return NonFiniteError(f"{method} diverged at epoch {epoch}, step {step}: non-finite parameters")


def sgd_posterior(config: TrainConfig, post: Posterior) -> Posterior:
    """The posterior SGD actually minimises: weight decay swaps in a Gaussian prior."""
    if config.weight_decay is None:
        return post
    return Posterior(post.model, weight_decay_prior(config.weight_decay), post.data,
                     post.temperature, post.block_rows)


def train_sgd(config: TrainConfig, post: Posterior, init=None, model_index: int = 0,
              callback=None) -> np.ndarray:
    """Minibatch SGD with heavy-ball momentum on the negative log-joint.

    ``callback(epoch, w)`` is called after every epoch.  Deterministic given
    ``(config.seed, model_index)``.
    """
    _check_batch(config, post)
    target = sgd_posterior(config, post)
    rng = _rng.stream(config.seed, model_index)
    w = _start(config, target, rng, init)
    v = np.zeros_like(w)
    total = config.n_epochs * _batches_per_epoch(target.n, config.batch_size)
    t = 0
    for epoch in range(config.n_epochs):
        for idx in epoch_batches(rng, target.n, config.batch_size):
            g = stochastic_grad(target, w, idx)
            v *= config.momentum
            v += g
            w += learning_rate(config, t, total) * v
            t += 1
            if not np.isfinite(w).all():
                raise _diverged("sgd", epoch, t)
        if callback is not None:
            callback(epoch, w)
    return w


def deep_ensemble(n_models: int, config: TrainConfig, post: Posterior, workers: int | None = None,
                  init=None) -> list[np.ndarray]:
    """``n_models`` independent SGD runs; member ``i`` uses RNG stream ``(seed, i)``."""
    if n_models < 1:
        raise ValueError("n_models must be at least 1")

    def one(i):
        start = init(i) if callable(init) else init
        return train_sgd(config, post, init=start, model_index=i)

    if n_models == 1 or workers == 1:
        return [one(i) for i in range(n_models)]
    with ThreadPoolExecutor(max_workers=workers or n_models) as pool:
        return list(pool.map(one, range(n_models)))


def _is_sample_epoch(config: TrainConfig, epoch: int) -> bool:
    done = epoch + 1 - config.n_burnin_epochs
    return done > 0 and done % config.thin_epochs == 0


def num_sgmcmc_samples(config: TrainConfig) -> int:
    return max(0, (config.n_epochs - config.n_burnin_epochs) // config.thin_epochs)


def sghmc_run(config: TrainConfig, post: Posterior, init=None, chain_index: int = 0,
              method: str | None = None) -> SampleStore:
    """SGHMC with friction ``1 - momentum``; optional cyclical steps and RMS preconditioning.

    The preconditioner omits the ``Gamma`` drift correction term, as is
    common in practice.
    """
    _check_batch(config, post)
    if num_sgmcmc_samples(config) < 1:
        raise ValueError("no samples would be kept: need n_epochs - n_burnin_epochs >= thin_epochs")
    rng = _rng.stream(config.seed, chain_index)
    w = _start(config, post, rng, init)
    v = np.zeros_like(w)
    beta = config.momentum
    rms = config.preconditioner == "rms"
    sq = np.zeros_like(w) if rms else None
    total = config.n_epochs * _batches_per_epoch(post.n, config.batch_size)
    samples = []
    t = 0
    for epoch in range(config.n_epochs):
        for idx in epoch_batches(rng, post.n, config.batch_size):
            g = stochastic_grad(post, w, idx)
            eps = learning_rate(config, t, total)
            noise = rng.standard_normal(w.shape[0])
            if rms:
                sq *= config.rms_decay
                sq += (1.0 - config.rms_decay) * g * g
                pre = 1.0 / (np.sqrt(sq) + config.rms_eps)
                g *= pre
                noise *= np.sqrt((1.0 - beta) * eps * pre)
            else:
                noise *= math.sqrt((1.0 - beta) * eps)
            v *= beta
            v += (0.5 * eps) * g + noise
            w += v
            t += 1
            if not np.isfinite(w).all():
                raise _diverged(method or "sghmc", epoch, t)
        if _is_sample_epoch(config, epoch):
            samples.append(w.copy())
    name = method or ("sgld" if beta == 0.0 and not rms else "sghmc")
    return SampleStore(
        samples=np.array(samples),
        chain_id=chain_index,
        config={name: config.to_dict(),
                "update": "v <- beta v + (eps/2) G g + N(0, (1-beta) eps G); w <- w + v",
                "model": post.model.to_dict(), "prior": post.prior.to_dict(),
                "temperature": post.temperature,
                "data": {"name": post.data.name, "n": post.n}},
        seed=config.seed,
        method=name,
    )


def sgld_run(config: TrainConfig, post: Posterior, init=None, chain_index: int = 0) -> SampleStore:
    """Stochastic-gradient Langevin dynamics (no momentum, no preconditioner)."""
    if config.momentum != 0.0 or config.preconditioner != "none":
        config = replace(config, momentum=0.0, preconditioner="none")
    return sghmc_run(config, post, init=init, chain_index=chain_index, method="sgld")


# --- mean-field variational inference ---------------------------------------


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    return np.log(np.expm1(y))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class VariationalPosterior:
    """Diagonal Gaussian ``q(w) = N(mean, diag(softplus(rho)^2))``."""

    mean: np.ndarray
    rho: np.ndarray
    elbo_history: list = field(default_factory=list)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.mean.shape != self.rho.shape or self.mean.ndim != 1:
            raise ValueError("mean and rho must be 1-D vectors of equal length")

    @classmethod
    def from_variance(cls, mean, variance) -> "VariationalPosterior":
        mean = np.asarray(mean, dtype=np.float64)
        std = np.sqrt(np.broadcast_to(np.asarray(variance, dtype=np.float64), mean.shape))
        return cls(mean.copy(), _softplus_inv(std))

    @property
    def std(self) -> np.ndarray:
        return _softplus(self.rho)

    @property
    def variance(self) -> np.ndarray:
        return self.std ** 2


def gaussian_kl(mean, std, prior_variance: float) -> float:
    """``KL(N(mean, std^2) || N(0, prior_variance))`` summed over coordinates."""
    var = std * std
    return float(np.sum(0.5 * (var + mean * mean) / prior_variance - 0.5
                        - np.log(std) + 0.5 * math.log(prior_variance)))


def gaussian_kl_grad(mean, std, prior_variance: float):
    """Gradients of :func:`gaussian_kl` with respect to ``mean`` and ``std``."""
    return mean / prior_variance, std / prior_variance - 1.0 / std


class Adam:
    """Adam ascent on a flat parameter vector."""

    def __init__(self, dim: int, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, grad, lr: float) -> np.ndarray:
        """Return the increment to *add* for gradient ascent."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return lr * m_hat / (np.sqrt(v_hat) + self.eps)


def mfvi_fit(config: TrainConfig, post: Posterior, init_mean, callback=None) -> VariationalPosterior:
    """Maximise the ELBO with one reparameterised draw per step and Adam.

    The KL term is analytic, so the prior must be Gaussian.  The likelihood
    term of each step is the minibatch estimate rescaled by ``n / |batch|``.
    """
    if not isinstance(post.prior, GaussianPrior):
        raise ValueError("mfvi_fit needs a Gaussian prior for the analytic KL term")
    if post.temperature != 1.0:
        raise ValueError("mfvi_fit supports temperature 1 only")
    _check_batch(config, post)
    alpha2 = post.prior.variance
    vp = VariationalPosterior.from_variance(init_mean, config.vi_init_variance)
    if vp.mean.shape != (post.dim,):
        raise ValueError(f"init_mean has shape {vp.mean.shape}, expected ({post.dim},)")
    d = post.dim
    rng = _rng.stream(config.seed, 0)
    opt = Adam(2 * d, config.adam_beta1, config.adam_beta2, config.adam_eps)
    total = config.n_epochs * _batches_per_epoch(post.n, config.batch_size)
    t = 0
    grad = np.empty(2 * d)
    for epoch in range(config.n_epochs):
        for idx in epoch_batches(rng, post.n, config.batch_size):
            std = _softplus(vp.rho)
            eps = rng.standard_normal(d)
            w = vp.mean + std * eps
            if idx is None:
                ll, g_ll = post.value_and_grad_log_likelihood(w)
            else:
                ll, g_ll = value_and_grad_arrays(post.model, w, post.data.inputs[idx],
                                                 post._targets[idx])
                scale = post.n / idx.shape[0]
                ll *= scale
                g_ll *= scale
            kl = gaussian_kl(vp.mean, std, alpha2)
            dkl_mu, dkl_std = gaussian_kl_grad(vp.mean, std, alpha2)
            grad[:d] = g_ll - dkl_mu
            grad[d:] = (g_ll * eps - dkl_std) * _sigmoid(vp.rho)
            step = opt.step(grad, learning_rate(config, t, total))
            vp.mean += step[:d]
            vp.rho += step[d:]
            t += 1
            if not (np.isfinite(vp.mean).all() and np.isfinite(vp.rho).all()):
                raise _diverged("mfvi", epoch, t)
            vp.elbo_history.append(ll - kl)
        if callback is not None:
            callback(epoch, vp)
    return vp


def mfvi_sample(vp: VariationalPosterior, n: int, seed) -> np.ndarray:
    """``n`` draws from ``q`` as an ``(n, d)`` array."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    return vp.mean + vp.std * rng.standard_normal((n, vp.mean.shape[0]))
