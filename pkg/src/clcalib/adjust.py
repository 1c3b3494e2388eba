"""Curvature and magnitude adjustments of the composite likelihood.

Every adjustment is stored in one affine-plus-power form,

    adjusted(theta) = w * loglik(A @ (theta - anchor) + anchor),

with ``A`` the identity for magnitude adjustments and ``w = 1`` for
curvature adjustments. Tuning happens once, at the classical estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import freq
from .betabin import EffectMeasure
from .data import MetaDataset
from .errors import InputError, NotSPD, NotSymmetric, SingularSensitivity, ZeroGradient

VARIANTS = (
    "none",
    "curvature-zca",
    "curvature-zcacor",
    "magnitude-omnibus",
    "magnitude-targeted",
)

CLAMP_RTOL = 1e-10


def _symmetric_eigh(M, name="matrix"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NotSymmetric(f"{name} must be square")
    scale = max(np.max(np.abs(M)), 1e-300)
    if np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    floor = -CLAMP_RTOL * abs(np.trace(M))
    if np.any(vals < floor):
        raise NotSPD(f"{name} has eigenvalue {vals.min():.3g} below the clamp floor")
    return np.clip(vals, 0.0, None), vecs


def zca_sqrt(M) -> np.ndarray:
    """Symmetric square root sharing the eigenvectors of ``M``.

    Eigenvalues within ``-1e-10 * trace`` of zero are clamped to zero.
    """
    vals, vecs = _symmetric_eigh(M)
    return (vecs * np.sqrt(vals)) @ vecs.T


def zca_inv_sqrt(M) -> np.ndarray:
    vals, vecs = _symmetric_eigh(M)
    if np.any(vals <= 0):
        raise NotSPD("matrix is singular")
    return (vecs / np.sqrt(vals)) @ vecs.T


def zca_cor_sqrt_inv_cov(sigma) -> np.ndarray:
    """ZCA-cor root W of the precision matrix, with W.T @ W = inv(sigma).

    W = P^{-1/2} D^{-1/2} where D holds the variances and P is the
    correlation matrix. Rescaling sigma by a positive diagonal D0 on both
    sides maps W to W @ inv(D0).
    """
    sigma = np.asarray(sigma, dtype=float)
    d = np.diag(sigma).copy()
    if np.any(d <= 0):
        raise NotSPD("covariance needs a strictly positive diagonal")
    s = 1.0 / np.sqrt(d)
    corr = sigma * s[:, None] * s[None, :]
    vals, _ = _symmetric_eigh(corr, "correlation matrix")
    if np.any(vals <= 0):
        raise NotSPD("covariance is not positive definite")
    return zca_inv_sqrt(corr) * s[None, :]


def zca_sqrt_inv_cov(sigma) -> np.ndarray:
    vals, _ = _symmetric_eigh(sigma)
    if np.any(vals <= 0):
        raise NotSPD("covariance is not positive definite")
    return zca_inv_sqrt(sigma)


_ROOTS = {"zca": zca_sqrt_inv_cov, "zcacor": zca_cor_sqrt_inv_cov}


@dataclass(frozen=True)
class Adjustment:
    variant: str
    anchor: np.ndarray
    A: np.ndarray | None = None
    w: float | None = None
    measure: EffectMeasure | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown adjustment {self.variant!r}")
        curvature = self.variant.startswith("curvature")
        if curvature == (self.A is None) or curvature == (self.w is not None):
            raise InputError(f"{self.variant}: exactly one of A or w must be set")
        if self.w is not None and not np.isfinite(self.w):
            raise InputError("temperature must be finite")
        if self.variant == "magnitude-targeted" and self.measure is None:
            raise InputError("targeted magnitude adjustment needs a measure")

    @property
    def label(self) -> str:
        if self.variant == "magnitude-targeted":
            return f"magnitude-targeted-{self.measure.label}"
        return self.variant

    @property
    def matrix(self) -> np.ndarray:
        return np.eye(self.anchor.shape[0]) if self.A is None else self.A

    @property
    def power(self) -> float:
        return 1.0 if self.w is None else float(self.w)

    def transform(self, theta) -> np.ndarray:
        """Map theta through the affine part; works on (..., p) arrays."""
        theta = np.asarray(theta, dtype=float)
        if self.A is None:
            return theta
        return (theta - self.anchor) @ self.A.T + self.anchor


def no_adjustment(fit: freq.FitResult) -> Adjustment:
    return Adjustment("none", anchor=fit.theta_hat, w=1.0)


def magnitude(fit: freq.FitResult, w: float) -> Adjustment:
    """Fixed-temperature adjustment; mostly useful for tests."""
    return Adjustment("magnitude-omnibus", anchor=fit.theta_hat, w=float(w))


def tune_curvature(fit: freq.FitResult, variant: str = "zca") -> Adjustment:
    """Tuning matrix A = W_N^{-1} W_V from square roots of the two precisions.

    Satisfies inv(A) @ N_hat @ inv(A).T == V_hat for either root.
    """
    try:
        root = _ROOTS[variant]
    except KeyError:
        raise InputError(f"unknown square-root variant {variant!r}") from None
    w_n = root(fit.N_hat)
    w_v = root(fit.V_hat)
    A = np.linalg.solve(w_n, w_v)
    return Adjustment(f"curvature-{variant}", anchor=fit.theta_hat, A=A)


def omnibus_temperature(N, V) -> float:
    p = N.shape[0]
    try:
        tr = np.trace(np.linalg.solve(N, V))
    except np.linalg.LinAlgError:
        raise SingularSensitivity("naive covariance is singular") from None
    return float(p / tr)


def tune_omnibus(fit: freq.FitResult) -> Adjustment:
    """Temperature p / trace(N^-1 V)."""
    w = omnibus_temperature(fit.N_hat, fit.V_hat)
    return Adjustment("magnitude-omnibus", anchor=fit.theta_hat, w=w)


def tune_targeted(fit: freq.FitResult, measure: EffectMeasure) -> Adjustment:
    """Temperature matching the naive and robust delta variances of ``measure``."""
    g = measure.gradient(fit.theta_hat)
    if not np.any(g):
        raise ZeroGradient(f"{measure.label} has zero gradient at the estimate")
    n_eta = float(g @ fit.N_hat @ g)
    v_eta = float(g @ fit.V_hat @ g)
    if n_eta <= 0 or v_eta <= 0:
        raise ZeroGradient(f"{measure.label}: delta variances are not positive")
    return Adjustment("magnitude-targeted", anchor=fit.theta_hat, w=n_eta / v_eta, measure=measure)


def tune(fit: freq.FitResult, variant: str, measure: EffectMeasure | None = None) -> Adjustment:
    if variant == "none":
        return no_adjustment(fit)
    if variant == "curvature-zca":
        return tune_curvature(fit, "zca")
    if variant == "curvature-zcacor":
        return tune_curvature(fit, "zcacor")
    if variant == "magnitude-omnibus":
        return tune_omnibus(fit)
    if variant == "magnitude-targeted":
        if measure is None:
            raise InputError("magnitude-targeted needs a target measure")
        return tune_targeted(fit, measure)
    raise InputError(f"unknown adjustment {variant!r}")


def adjusted_loglik(adj: Adjustment, data: MetaDataset, theta) -> float:
    return adj.power * freq.composite_loglik(data, adj.transform(theta))


def implied_covariance(adj: Adjustment, fit: freq.FitResult) -> np.ndarray:
    """Inverse negative Hessian of the adjusted log-likelihood at the anchor."""
    A = adj.matrix
    Ainv = np.linalg.inv(A)
    return Ainv @ fit.N_hat @ Ainv.T / adj.power
