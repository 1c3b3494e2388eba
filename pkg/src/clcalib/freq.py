"""Maximum composite likelihood fitting and sandwich covariance estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import betabin
from .data import MetaDataset
from .errors import DegenerateData, NonConvergence, SingularSensitivity

logger = logging.getLogger(__name__)

SCORE_TOL = 1e-6
MAX_RESTARTS = 5
MAX_CONDITION = 1e12


def _split(data: MetaDataset, theta):
    theta = betabin.check_theta(theta, data.n_groups)
    return theta[0::2], theta[1::2]


def composite_loglik(data: MetaDataset, theta) -> float:
    """Sum of marginal log-likelihood contributions over studies and groups."""
    la, lb = _split(data, theta)
    return float(np.sum(betabin.log_pmf(data.events, data.sizes, la, lb)))


def study_scores(data: MetaDataset, theta) -> np.ndarray:
    """Per-study total scores u_i*, shape (N, 2K).

    Group k only contributes to its own two coordinates, so the per-group
    scores are laid side by side.
    """
    la, lb = _split(data, theta)
    cell = betabin.score_ik(data.events, data.sizes, la, lb)  # (N, K, 2)
    return cell.reshape(data.n_studies, -1)


def total_score(data: MetaDataset, theta) -> np.ndarray:
    return study_scores(data, theta).sum(axis=0)


def sensitivity(data: MetaDataset, theta) -> np.ndarray:
    """Observed sensitivity: minus the Hessian of the composite log-likelihood.

    Block diagonal with one 2x2 block per group.
    """
    la, lb = _split(data, theta)
    blocks = -betabin.hessian_ik(data.events, data.sizes, la, lb).sum(axis=0)  # (K, 2, 2)
    k = data.n_groups
    out = np.zeros((2 * k, 2 * k))
    for j in range(k):
        out[2 * j : 2 * j + 2, 2 * j : 2 * j + 2] = blocks[j]
    return out


def variability(data: MetaDataset, theta) -> np.ndarray:
    """Cluster-robust variability: sum over studies of u_i* u_i*^T."""
    u = study_scores(data, theta)
    return u.T @ u


def _check_degenerate(data: MetaDataset):
    y, n = data.events, data.sizes
    for j in range(data.n_groups):
        if np.all(y[:, j] == 0) or np.all(y[:, j] == n[:, j]):
            raise DegenerateData(f"group {j + 1}: all counts are 0 or all equal n")


@dataclass(frozen=True)
class FitResult:
    theta_hat: np.ndarray
    loglik_at_max: float
    H_hat: np.ndarray
    J_hat: np.ndarray
    N_hat: np.ndarray
    V_hat: np.ndarray
    converged: bool
    iterations: int

    @property
    def k(self) -> int:
        return self.theta_hat.shape[0] // 2


def _newton_polish(data, theta, max_steps=50):
    """Plain Newton iterations from near the maximum until the score is tiny."""
    for _ in range(max_steps):
        u = total_score(data, theta)
        if np.max(np.abs(u)) < SCORE_TOL:
            break
        h = sensitivity(data, theta)
        try:
            step = np.linalg.solve(h, u)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        base = composite_loglik(data, theta)
        t = 1.0
        while t > 1e-6:
            cand = theta + t * step
            if composite_loglik(data, cand) >= base - 1e-12 * abs(base):
                break
            t /= 2
        theta = theta + t * step
        if np.max(np.abs(t * step)) < 1e-14:
            break
    return theta


def maximize(data: MetaDataset, start=None, rng: np.random.Generator | None = None):
    """Maximize the composite log-likelihood.

    Runs a trust-region Newton search (analytic gradient and Hessian) from
    ``start`` (default: all shapes equal to 1), polishes with Newton steps,
    and restarts from perturbed starting points when the score tolerance is
    not met.

    Returns:
        (theta_hat, iterations)

    Raises:
        DegenerateData: a group has no interior counts.
        NonConvergence: the score sup-norm stayed above ``SCORE_TOL``.
    """
    _check_degenerate(data)
    p = 2 * data.n_groups
    start = np.zeros(p) if start is None else betabin.check_theta(start, data.n_groups).copy()
    rng = rng if rng is not None else np.random.default_rng(0)

    def fun(x):
        try:
            return -composite_loglik(data, x)
        except ValueError:
            return np.inf

    def jac(x):
        return -total_score(data, x)

    def hess(x):
        return sensitivity(data, x)

    total_iter = 0
    best = None
    for attempt in range(MAX_RESTARTS + 1):
        x0 = start if attempt == 0 else start + rng.normal(scale=0.5 * attempt, size=p)
        with np.errstate(over="ignore", invalid="ignore"):
            res = optimize.minimize(
                fun, x0, jac=jac, hess=hess, method="trust-exact", options={"gtol": 1e-9, "maxiter": 500}
            )
        total_iter += int(res.nit)
        x = res.x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 30:
            logger.debug("attempt %d drifted to %s", attempt, x)
            continue
        x = _newton_polish(data, x)
        u = total_score(data, x)
        sup = float(np.max(np.abs(u)))
        if best is None or sup < best[1]:
            best = (x, sup)
        if sup < SCORE_TOL:
            return x, total_iter
    sup = best[1] if best else float("nan")
    raise NonConvergence(f"score sup-norm {sup:.3g} above {SCORE_TOL} after {MAX_RESTARTS} restarts")


def naive_covariance_from(H: np.ndarray) -> np.ndarray:
    if np.linalg.cond(H) > MAX_CONDITION:
        raise SingularSensitivity("sensitivity matrix is numerically singular")
    N = np.linalg.inv(H)
    return 0.5 * (N + N.T)


def robust_covariance_from(H: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Sandwich H^-1 J H^-1, symmetrized."""
    N = naive_covariance_from(H)
    V = N @ J @ N
    return 0.5 * (V + V.T)


def naive_covariance(fit: FitResult) -> np.ndarray:
    return naive_covariance_from(fit.H_hat)


def robust_covariance(fit: FitResult) -> np.ndarray:
    return robust_covariance_from(fit.H_hat, fit.J_hat)


def delta_variance(cov: np.ndarray, measure: betabin.EffectMeasure, theta) -> float:
    g = measure.gradient(theta)
    return float(max(g @ cov @ g, 0.0))


def fit(data: MetaDataset, start=None, rng: np.random.Generator | None = None) -> FitResult:
    """Full classical analysis: estimate, sensitivity, variability, covariances."""
    theta_hat, iterations = maximize(data, start, rng)
    H = sensitivity(data, theta_hat)
    J = variability(data, theta_hat)
    N = naive_covariance_from(H)
    V = robust_covariance_from(H, J)
    if np.any(np.linalg.eigvalsh(H) <= 0):
        raise SingularSensitivity("sensitivity is not positive definite at the estimate")
    return FitResult(
        theta_hat=theta_hat,
        loglik_at_max=composite_loglik(data, theta_hat),
        H_hat=H,
        J_hat=J,
        N_hat=N,
        V_hat=V,
        converged=True,
        iterations=iterations,
    )


def fit_from_matrices(theta_hat, H, J) -> FitResult:
    """Build a FitResult from given matrices (used for tuning on synthetic H, J)."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    H = np.asarray(H, dtype=float)
    J = np.asarray(J, dtype=float)
    return FitResult(
        theta_hat=theta_hat,
        loglik_at_max=float("nan"),
        H_hat=H,
        J_hat=J,
        N_hat=naive_covariance_from(H),
        V_hat=robust_covariance_from(H, J),
        converged=True,
        iterations=0,
    )
