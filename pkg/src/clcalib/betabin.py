"""Marginal beta-binomial model on the log-shape scale.

Parameters are stored as ``theta = (log a_1, log b_1, ..., log a_K, log b_K)``.
Every function here is vectorized with numpy broadcasting and is pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, digamma, gammaln, polygamma

from .errors import DomainError, InputError

THETA_PRIME = np.log([3.11, 2.91, 3.94, 3.36])
THETA_DOUBLE_PRIME = np.log([0.5, 0.5, 0.5, 0.5])


def _check_counts(y, n):
    y = np.asarray(y)
    n = np.asarray(n)
    if np.any(y < 0) or np.any(y > n):
        raise DomainError("beta-binomial support is 0 <= y <= n")
    return y, n


def check_theta(theta, k: int | None = None) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] % 2:
        raise InputError("theta must hold (log alpha, log beta) pairs")
    if k is not None and theta.shape[-1] != 2 * k:
        raise InputError(f"theta must have length {2 * k}, got {theta.shape[-1]}")
    if not np.all(np.isfinite(theta)):
        raise InputError("theta entries must be finite")
    return theta


def log_pmf(y, n, log_alpha, log_beta):
    """Beta-binomial log-probability, evaluated through log-gamma only."""
    y, n = _check_counts(y, n)
    a = np.exp(log_alpha)
    b = np.exp(log_beta)
    log_binom = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    return log_binom + betaln(y + a, n - y + b) - betaln(a, b)


def score_ik(y, n, log_alpha, log_beta):
    """Gradient of :func:`log_pmf` with respect to ``(log alpha, log beta)``.

    Returns an array with a trailing axis of length 2.
    """
    y, n = _check_counts(y, n)
    a = np.exp(log_alpha)
    b = np.exp(log_beta)
    common = digamma(a + b) - digamma(n + a + b)
    d_a = digamma(y + a) - digamma(a) + common
    d_b = digamma(n - y + b) - digamma(b) + common
    return np.stack(np.broadcast_arrays(a * d_a, b * d_b), axis=-1)


def hessian_ik(y, n, log_alpha, log_beta):
    """Second derivatives of :func:`log_pmf` in the log-shape scale, shape (..., 2, 2)."""
    y, n = _check_counts(y, n)
    a = np.exp(log_alpha)
    b = np.exp(log_beta)
    common1 = digamma(a + b) - digamma(n + a + b)
    common2 = polygamma(1, a + b) - polygamma(1, n + a + b)
    d_a = digamma(y + a) - digamma(a) + common1
    d_b = digamma(n - y + b) - digamma(b) + common1
    d_aa = polygamma(1, y + a) - polygamma(1, a) + common2
    d_bb = polygamma(1, n - y + b) - polygamma(1, b) + common2
    h_aa = a * d_a + a * a * d_aa
    h_bb = b * d_b + b * b * d_bb
    h_ab = a * b * common2
    h_aa, h_ab, h_bb = np.broadcast_arrays(h_aa, h_ab, h_bb)
    return np.stack([np.stack([h_aa, h_ab], -1), np.stack([h_ab, h_bb], -1)], -2)


def pi_k(theta, k: int):
    """Average event probability a_k / (a_k + b_k) of group ``k`` (0-based)."""
    theta = np.asarray(theta, dtype=float)
    # sigmoid(log a - log b), written to stay accurate in both tails
    return 0.5 * (1.0 + np.tanh(0.5 * (theta[..., 2 * k] - theta[..., 2 * k + 1])))


def odds_k(theta, k: int):
    theta = np.asarray(theta, dtype=float)
    return np.exp(theta[..., 2 * k] - theta[..., 2 * k + 1])


def log_dor(theta):
    theta = np.asarray(theta, dtype=float)
    return theta[..., 0] - theta[..., 1] - theta[..., 2] + theta[..., 3]


def dor(theta):
    """Diagnostic odds ratio o_1 / o_2."""
    return np.exp(log_dor(theta))


def risk_diff(theta):
    return pi_k(theta, 0) - pi_k(theta, 1)


_DOR_DIRECTION = np.array([1.0, -1.0, -1.0, 1.0])


@dataclass(frozen=True)
class EffectMeasure:
    """A scalar function of theta together with its analytic gradient.

    ``kind`` is one of ``"dor"``, ``"logdor"``, ``"riskdiff"`` or ``"marginal"``;
    the last picks the coordinate ``index`` of theta.
    """

    kind: str
    index: int | None = None

    def __post_init__(self):
        if self.kind not in ("dor", "logdor", "riskdiff", "marginal"):
            raise InputError(f"unknown effect measure {self.kind!r}")
        if (self.kind == "marginal") != (self.index is not None):
            raise InputError("only the marginal measure takes an index")

    @classmethod
    def parse(cls, text: str) -> EffectMeasure:
        """Parse ``dor``, ``logdor``, ``riskdiff`` or ``theta<j>`` (0-based)."""
        text = text.strip().lower()
        if text.startswith("theta"):
            try:
                return cls("marginal", int(text[5:]))
            except ValueError:
                raise InputError(f"bad marginal component {text!r}") from None
        return cls(text)

    @property
    def label(self) -> str:
        return f"theta{self.index}" if self.kind == "marginal" else self.kind

    @property
    def increasing_in_logdor(self) -> bool:
        return self.kind in ("dor", "logdor")

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "marginal":
            return theta[..., self.index]
        if theta.shape[-1] != 4:
            raise InputError(f"{self.kind} is defined for two groups only")
        if self.kind == "dor":
            return dor(theta)
        if self.kind == "logdor":
            return log_dor(theta)
        return risk_diff(theta)

    def gradient(self, theta):
        """Gradient with respect to the log-shape parameters, shape (..., 2K)."""
        theta = np.asarray(theta, dtype=float)
        if self.kind == "marginal":
            grad = np.zeros_like(theta)
            grad[..., self.index] = 1.0
            return grad
        if theta.shape[-1] != 4:
            raise InputError(f"{self.kind} is defined for two groups only")
        if self.kind == "logdor":
            return np.broadcast_to(_DOR_DIRECTION, theta.shape).copy()
        if self.kind == "dor":
            return dor(theta)[..., None] * _DOR_DIRECTION
        p1 = pi_k(theta, 0)
        p2 = pi_k(theta, 1)
        s1 = p1 * (1 - p1)
        s2 = p2 * (1 - p2)
        return np.stack([s1, -s1, -s2, s2], axis=-1)


DOR = EffectMeasure("dor")
LOG_DOR = EffectMeasure("logdor")
RISK_DIFF = EffectMeasure("riskdiff")


def marginal(index: int) -> EffectMeasure:
    return EffectMeasure("marginal", index)
