"""Bivariate Archimedean copulas and synthetic meta-analysis datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import betaincinv

from .betabin import THETA_DOUBLE_PRIME, THETA_PRIME, check_theta
from .data import MetaDataset
from .errors import InputError, NonConvergence

FAMILIES = ("clayton", "frank", "gumbel")
TAU_MAX = 0.999
BISECT_TOL = 1e-8


def debye1(x: float) -> float:
    """First Debye function D_1(x) = (1/x) * int_0^x t / (e^t - 1) dt."""
    if x == 0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / np.expm1(t) if t != 0 else 1.0, 0.0, abs(x), epsabs=1e-14, epsrel=1e-13)
    val /= abs(x)
    # D_1(-x) = D_1(x) + x / 2
    return val + abs(x) / 2 if x < 0 else val


def debye2(x: float) -> float:
    """Second Debye function D_2(x) = (2/x^2) * int_0^x t^2 / (e^t - 1) dt, x > 0."""
    val, _ = integrate.quad(lambda t: t * t / np.expm1(t) if t != 0 else 0.0, 0.0, x, epsabs=1e-14, epsrel=1e-13)
    return 2.0 * val / (x * x)


def kendall_tau(kind: str, param: float) -> float:
    """Kendall's tau of a copula as a function of its parameter."""
    if kind == "clayton":
        return param / (param + 2.0)
    if kind == "gumbel":
        return 1.0 - 1.0 / param
    if kind == "frank":
        return 1.0 - 4.0 / param * (1.0 - debye1(param))
    raise InputError(f"unknown copula family {kind!r}")


def copula_cdf(kind: str, param: float, u, v):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if kind == "clayton":
        return np.maximum(u**-param + v**-param - 1.0, 0.0) ** (-1.0 / param)
    if kind == "gumbel":
        return np.exp(-(((-np.log(u)) ** param + (-np.log(v)) ** param) ** (1.0 / param)))
    if kind == "frank":
        num = np.expm1(-param * u) * np.expm1(-param * v)
        return -np.log1p(num / np.expm1(-param)) / param
    raise InputError(f"unknown copula family {kind!r}")


def spearman_rho(kind: str, param: float) -> float:
    """Spearman's rho, 12 * int int C(u, v) du dv - 3."""
    if kind == "frank":
        return 1.0 - 12.0 / param * (debye1(param) - debye2(param))
    val, _ = integrate.dblquad(
        lambda v, u: copula_cdf(kind, param, u, v), 0.0, 1.0, 0.0, 1.0, epsabs=1e-11, epsrel=1e-11
    )
    return 12.0 * val - 3.0


def _lower_bound(kind):
    return {"clayton": 0.0, "gumbel": 1.0, "frank": 0.0}[kind]


def _bisect(fn, target, lo, hi, tol=BISECT_TOL, max_iter=200):
    """Bisection for an increasing ``fn``; expands ``hi`` geometrically when needed."""
    for _ in range(60):
        if fn(hi) >= target:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise NonConvergence("could not bracket the copula parameter")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = fn(mid)
        if abs(val - target) < tol:
            return mid
        if val < target:
            lo = mid
        else:
            hi = mid
    raise NonConvergence("bisection for the copula parameter did not converge")


def param_from_tau(kind: str, tau: float) -> float:
    """Copula parameter giving Kendall's tau (positive dependence only)."""
    if kind not in FAMILIES:
        raise InputError(f"unknown copula family {kind!r}")
    if not 0 < tau < TAU_MAX:
        raise InputError(f"tau must lie in (0, {TAU_MAX})")
    if kind == "clayton":
        return 2.0 * tau / (1.0 - tau)
    if kind == "gumbel":
        return 1.0 / (1.0 - tau)
    return _bisect(lambda t: kendall_tau("frank", t), tau, 1e-9, 10.0)


def param_from_spearman(kind: str, rho_s: float) -> float:
    if kind not in FAMILIES:
        raise InputError(f"unknown copula family {kind!r}")
    if not 0 < rho_s < TAU_MAX:
        raise InputError(f"Spearman's rho must lie in (0, {TAU_MAX})")
    lo = _lower_bound(kind) + 1e-9
    return _bisect(lambda t: spearman_rho(kind, t), rho_s, lo, lo + 4.0)


@dataclass(frozen=True)
class CopulaFamily:
    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise InputError(f"unknown copula family {self.kind!r}")
        if self.kind == "clayton" and not self.param > 0:
            raise InputError("Clayton parameter must be positive")
        if self.kind == "gumbel" and not self.param >= 1:
            raise InputError("Gumbel parameter must be at least 1")
        if self.kind == "frank" and not self.param > 0:
            raise InputError("Frank parameter must be positive")

    @classmethod
    def from_rank_correlation(cls, kind: str, value: float, rank: str = "kendall") -> CopulaFamily:
        if rank == "kendall":
            return cls(kind, param_from_tau(kind, value))
        if rank == "spearman":
            return cls(kind, param_from_spearman(kind, value))
        raise InputError(f"unknown rank correlation {rank!r}")


def _positive_stable(alpha: float, size, rng):
    """Positive stable variates with Laplace transform exp(-s^alpha), 0 < alpha <= 1 (Kanter)."""
    u = np.pi * rng.random(size)
    e = rng.standard_exponential(size)
    if alpha == 1.0:
        return np.ones(size)
    a = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * u) / e) ** ((1.0 - alpha) / alpha)
    return a * b


def sample_pairs(family: CopulaFamily, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` pairs from the copula, shape (size, 2), all inside (0, 1).

    Clayton and Gumbel use the frailty (Marshall-Olkin) construction;
    Frank uses conditional inversion.
    """
    th = family.param
    if family.kind == "clayton":
        v = rng.standard_gamma(1.0 / th, size)
        e = rng.standard_exponential((size, 2))
        u = (1.0 + e / v[:, None]) ** (-1.0 / th)
    elif family.kind == "gumbel":
        v = _positive_stable(1.0 / th, size, rng)
        e = rng.standard_exponential((size, 2))
        u = np.exp(-((e / v[:, None]) ** (1.0 / th)))
    else:
        u1 = rng.random(size)
        t = rng.random(size)
        # conditional inverse, in log space so e^-th below machine epsilon stays exact
        log_t = np.log(t)
        log_1mt = np.log1p(-t)
        log_num = np.logaddexp(log_t - th, log_1mt - th * u1)
        log_den = np.logaddexp(log_t, log_1mt - th * u1)
        u2 = -(log_num - log_den) / th
        u = np.column_stack([u1, u2])
    tiny = np.finfo(float).tiny
    return np.clip(u, tiny, 1.0 - np.finfo(float).epsneg)


def sample_pair(family: CopulaFamily, rng: np.random.Generator):
    u = sample_pairs(family, 1, rng)[0]
    return float(u[0]), float(u[1])


def beta_ppf(u, a, b):
    """Inverse of the regularized incomplete beta function."""
    return betaincinv(a, b, u)


def theta_config(label: str) -> np.ndarray:
    if label == "prime":
        return THETA_PRIME.copy()
    if label == "double_prime":
        return THETA_DOUBLE_PRIME.copy()
    raise InputError(f"unknown theta configuration {label!r}")


THETA_LABELS = ("prime", "double_prime", "mixed")


@dataclass(frozen=True)
class SimSetting:
    """One cell of the simulation grid.

    ``theta_config`` is required in phase 2 and forbidden in phase 1. It is
    ``"prime"``, ``"double_prime"`` or ``"mixed"``; the last picks one of the
    two with probability 1/2 per replication.
    """

    family: str
    rank_correlation: float
    phase: int
    sizes: np.ndarray
    theta_config: str | None = None
    rank: str = "kendall"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InputError(f"unknown copula family {self.family!r}")
        if not 0 <= self.rank_correlation < TAU_MAX:
            raise InputError("rank correlation must lie in [0, 0.999)")
        if self.phase not in (1, 2):
            raise InputError("phase must be 1 or 2")
        if self.phase == 2 and self.theta_config not in THETA_LABELS:
            raise InputError("phase 2 needs theta_config in prime|double_prime|mixed")
        if self.phase == 1 and self.theta_config is not None:
            raise InputError("phase 1 draws theta from the prior; theta_config must be unset")
        sizes = np.asarray(self.sizes, dtype=np.int64)
        if sizes.ndim != 2 or sizes.shape[1] != 2 or np.any(sizes < 1):
            raise InputError("sizes must be an (N, 2) array of positive integers")
        sizes.setflags(write=False)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_studies(self) -> int:
        return self.sizes.shape[0]

    def copula(self) -> CopulaFamily | None:
        """None means independence (rank correlation 0)."""
        if self.rank_correlation == 0:
            return None
        return CopulaFamily.from_rank_correlation(self.family, self.rank_correlation, self.rank)


def default_sizes(n_studies: int, seed: int, low: int = 20, high: int = 200) -> np.ndarray:
    """Group sizes drawn once from a log-uniform on [low, high] and rounded."""
    rng = np.random.default_rng(seed)
    raw = np.exp(rng.uniform(np.log(low), np.log(high), size=(n_studies, 2)))
    return np.rint(raw).astype(np.int64)


def simulate_dataset(setting: SimSetting, prior, rng: np.random.Generator, family: CopulaFamily | None = None):
    """Draw one dataset.

    Returns:
        (dataset, true_theta, theta_label) where ``theta_label`` is
        ``"prior"`` in phase 1.
    """
    if setting.phase == 1:
        true_theta = prior.sample(rng)
        label = "prior"
    else:
        label = setting.theta_config
        if label == "mixed":
            label = "prime" if rng.random() < 0.5 else "double_prime"
        true_theta = theta_config(label)
    true_theta = check_theta(true_theta, 2)
    if family is None:
        family = setting.copula()
    p = latent_probabilities(family, true_theta, setting.n_studies, rng)
    y = rng.binomial(setting.sizes, p)
    return MetaDataset(setting.sizes, y), true_theta, label


def latent_probabilities(family: CopulaFamily | None, theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """Per-study event probabilities, shape (n, 2), with Beta(a_k, b_k) margins.

    ``family=None`` draws the two groups independently.
    """
    theta = check_theta(theta, 2)
    u = rng.random((n, 2)) if family is None else sample_pairs(family, n, rng)
    a = np.exp(theta[0::2])
    b = np.exp(theta[1::2])
    return beta_ppf(u, a[None, :], b[None, :])
