"""Adaptive random-walk Metropolis sampling and posterior summaries."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .adjust import Adjustment, adjusted_loglik
from .betabin import EffectMeasure
from .data import MetaDataset
from .errors import InputError, NonFiniteTarget

_LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class GaussianPrior:
    """Independent Gaussian prior on the log-shape parameters."""

    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if mean.shape != var.shape or mean.ndim != 1:
            raise InputError("prior mean and variances must be vectors of equal length")
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise InputError("prior variances must be positive and finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)

    @classmethod
    def isotropic(cls, dim: int, variance: float = 1.0, mean: float = 0.0) -> GaussianPrior:
        return cls(np.full(dim, float(mean)), np.full(dim, float(variance)))

    def logpdf(self, theta):
        z = np.asarray(theta, dtype=float) - self.mean
        return -0.5 * np.sum(z * z / self.variances + np.log(self.variances) + _LOG_2PI, axis=-1)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.variances) * rng.standard_normal(self.mean.shape)


def log_posterior(adj: Adjustment, prior: GaussianPrior, data: MetaDataset, theta) -> float:
    """Unnormalized log posterior: prior plus adjusted composite log-likelihood."""
    return float(prior.logpdf(theta)) + adjusted_loglik(adj, data, theta)


class BatchedLogPosterior:
    """Adjusted log posteriors for B independent problems sharing one data shape.

    Evaluating all problems at once on a (B, p) array amortizes the Python
    overhead of the sampler loop. Chain ``b`` uses ``datasets[b]``,
    ``adjustments[b]`` and ``priors[b]``.
    """

    def __init__(self, datasets, adjustments, priors):
        if not (len(datasets) == len(adjustments) == len(priors)) or not datasets:
            raise InputError("need one dataset, adjustment and prior per chain")
        shape = datasets[0].sizes.shape
        if any(d.sizes.shape != shape for d in datasets):
            raise InputError("all datasets in a batch must have the same shape")
        self.n = np.stack([d.sizes for d in datasets]).astype(float)  # (B, N, K)
        self.y = np.stack([d.events for d in datasets]).astype(float)
        self.n_studies = shape[0]
        self.const = np.sum(gammaln(self.n + 1) - gammaln(self.y + 1) - gammaln(self.n - self.y + 1), axis=(1, 2))
        self.A = np.stack([a.matrix for a in adjustments])
        self.anchor = np.stack([a.anchor for a in adjustments])
        self.w = np.array([a.power for a in adjustments])
        self.curved = any(a.A is not None for a in adjustments)
        self.prior_mean = np.stack([p.mean for p in priors])
        self.prior_var = np.stack([p.variances for p in priors])
        self.prior_const = -0.5 * np.sum(np.log(self.prior_var) + _LOG_2PI, axis=1)

    def __len__(self):
        return self.w.shape[0]

    def loglik(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.curved:
            theta = np.einsum("bij,bj->bi", self.A, theta - self.anchor) + self.anchor
        a = np.exp(theta[:, 0::2])[:, None, :]  # (B, 1, K)
        b = np.exp(theta[:, 1::2])[:, None, :]
        cells = gammaln(self.y + a) + gammaln(self.n - self.y + b) - gammaln(self.n + a + b)
        per_group = gammaln(a[:, 0] + b[:, 0]) - gammaln(a[:, 0]) - gammaln(b[:, 0])  # (B, K)
        return self.const + cells.sum(axis=(1, 2)) + self.n_studies * per_group.sum(axis=1)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        z = theta - self.prior_mean
        prior = self.prior_const - 0.5 * np.sum(z * z / self.prior_var, axis=1)
        with np.errstate(over="ignore", invalid="ignore"):
            ll = self.loglik(theta)
        out = prior + self.w * ll
        return np.where(np.isfinite(out), out, -np.inf)


@dataclass(frozen=True)
class ChainConfig:
    """Sampler settings. ``scale`` defaults to 2.38^2 / dim."""

    iterations: int = 60_000
    burn_in: int = 10_000
    thin: int = 10
    adapt_start: int = 1_000
    adapt_every: int = 100
    jitter: float = 1e-8
    scale: float | None = None
    init_sd: float = 0.1

    def __post_init__(self):
        if self.iterations <= self.burn_in or self.burn_in < 0:
            raise InputError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.adapt_every < 1 or self.adapt_start < 1:
            raise InputError("thin, adapt_every and adapt_start must be positive")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass(frozen=True)
class PosteriorSample:
    draws: np.ndarray
    acceptance_rate: float
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.draws.shape[0]

    def to_csv(self, names=None) -> str:
        p = self.draws.shape[1]
        if names is None:
            names = parameter_names(p // 2)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        for row in self.draws:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def parameter_names(k: int) -> list[str]:
    names = []
    for j in range(1, k + 1):
        names += [f"log_alpha{j}", f"log_beta{j}"]
    return names


def _cholesky_batch(cov, previous):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        out = previous.copy()
        for b in range(cov.shape[0]):
            try:
                out[b] = np.linalg.cholesky(cov[b])
            except np.linalg.LinAlgError:
                pass
        return out


def run_chains(target, inits, config: ChainConfig, rngs, init_covs=None) -> list[PosteriorSample]:
    """Run B adaptive Metropolis chains in lockstep.

    Args:
        target: callable mapping a (B, p) array of states to (B,) log densities.
        inits: (B, p) starting states.
        config: shared sampler settings.
        rngs: one ``numpy.random.Generator`` per chain. Chain b draws its
            proposals and uniforms only from ``rngs[b]``, in blocks of
            ``config.adapt_every`` iterations.
        init_covs: optional (B, p, p) covariances for the fixed proposal used
            before adaptation starts; default ``init_sd**2 * I``.

    Proposals use (scale * (history covariance + jitter * I)) once
    ``adapt_start`` iterations have elapsed, refreshed every ``adapt_every``.
    """
    x = np.array(inits, dtype=float)
    if x.ndim != 2:
        raise InputError("inits must be a (chains, dim) array")
    nb, d = x.shape
    if len(rngs) != nb:
        raise InputError("one random generator per chain required")
    scale = config.scale if config.scale is not None else 2.38**2 / d
    lp = np.asarray(target(x), dtype=float)
    if not np.all(np.isfinite(lp)):
        bad = np.flatnonzero(~np.isfinite(lp))
        raise NonFiniteTarget(f"target is not finite at the initial state of chain(s) {bad.tolist()}")

    if init_covs is None:
        cov0 = np.broadcast_to(np.eye(d) * config.init_sd**2, (nb, d, d))
    else:
        cov0 = np.asarray(init_covs, dtype=float)
    chol = _cholesky_batch(scale * (cov0 + config.jitter * np.eye(d)), np.broadcast_to(np.eye(d), (nb, d, d)).copy())

    s1 = np.zeros((nb, d))
    s2 = np.zeros((nb, d, d))
    count = 0
    n_keep = config.n_retained
    kept = np.empty((nb, n_keep, d))
    k = 0
    accepted = np.zeros(nb)
    block = config.adapt_every
    it = 0
    while it < config.iterations:
        m = min(block, config.iterations - it)
        z = np.stack([r.standard_normal((m, d)) for r in rngs], axis=1)  # (m, B, d)
        log_u = np.log(np.stack([r.random(m) for r in rngs], axis=1))  # (m, B)
        steps = np.einsum("bij,mbj->mbi", chol, z)
        for j in range(m):
            prop = x + steps[j]
            lp_prop = target(prop)
            with np.errstate(invalid="ignore"):
                acc = log_u[j] < lp_prop - lp
            x = np.where(acc[:, None], prop, x)
            lp = np.where(acc, lp_prop, lp)
            s1 += x
            s2 += x[:, :, None] * x[:, None, :]
            count += 1
            if it >= config.burn_in:
                accepted += acc
                if (it - config.burn_in + 1) % config.thin == 0 and k < n_keep:
                    kept[:, k] = x
                    k += 1
            it += 1
        if it >= config.adapt_start and count > d + 1:
            mean = s1 / count
            cov = (s2 - count * mean[:, :, None] * mean[:, None, :]) / (count - 1)
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            chol = _cholesky_batch(scale * (cov + config.jitter * np.eye(d)), chol)

    post = config.iterations - config.burn_in
    meta = {
        "iterations": config.iterations,
        "burn_in": config.burn_in,
        "thin": config.thin,
    }
    return [PosteriorSample(kept[b, :k].copy(), float(accepted[b] / post), dict(meta)) for b in range(nb)]


def run_chain(target, init, config: ChainConfig, rng: np.random.Generator, init_cov=None) -> PosteriorSample:
    """Single-chain wrapper around :func:`run_chains`; ``target`` maps a vector to a float."""
    init = np.asarray(init, dtype=float)

    def batched(states):
        return np.array([float(target(states[0]))])

    covs = None if init_cov is None else np.asarray(init_cov, dtype=float)[None]
    return run_chains(batched, init[None], config, [rng], covs)[0]


def measure_values(sample: PosteriorSample, measure: EffectMeasure) -> np.ndarray:
    return np.asarray(measure.value(sample.draws), dtype=float)


def qb_interval(sample: PosteriorSample, measure: EffectMeasure, level: float):
    """Central quantile-based credible interval at credibility ``level``.

    Quantiles invert the empirical CDF (order statistics), so the interval
    commutes exactly with increasing transforms of the measure.
    """
    if not 0 <= level < 1:
        raise InputError("credibility level must lie in [0, 1)")
    if sample.size < 100:
        raise InputError("need at least 100 draws for a credible interval")
    values = measure_values(sample, measure)
    lo, hi = np.quantile(values, [(1 - level) / 2, (1 + level) / 2], method="inverted_cdf")
    return float(lo), float(hi)


def h_statistic(sample: PosteriorSample, measure: EffectMeasure, eta0: float) -> float:
    """Posterior probability that the measure is at most ``eta0``."""
    values = measure_values(sample, measure)
    return float(np.mean(values <= eta0))


def g_statistic(h: float) -> float:
    return abs(2.0 * h - 1.0)
