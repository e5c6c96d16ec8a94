"""Least-squares baseline and its self-normalized confidence region."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

CONFIDENCE_FORMULA = "self-normalized-v1"


class RankDeficientError(LinAlgError):
    pass


@dataclass(frozen=True)
class OlsResult:
    theta_hat: np.ndarray
    gram: np.ndarray
    residual_max: float
    ridge: float = 0.0


@dataclass(frozen=True)
class ConfidenceDiameter:
    level: float
    diameter: float
    ridge: float
    beta: float
    formula: str = CONFIDENCE_FORMULA


def ols_fit_arrays(Z, Y, ridge: float = 0.0) -> OlsResult:
    """``theta_hat = Y^T Z (Z^T Z + ridge I)^-1`` for row-sample arrays.

    ``Z`` has shape (T, d) and ``Y`` shape (T, n).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Z.shape[0] != Y.shape[0]:
        raise ValueError(f"{Z.shape[0]} regressors but {Y.shape[0]} targets")
    if Z.shape[0] < 1:
        raise ValueError("need at least one sample")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    d = Z.shape[1]
    gram = Z.T @ Z
    reg = gram + ridge * np.eye(d)
    if ridge == 0 and np.linalg.matrix_rank(gram) < d:
        raise RankDeficientError(
            f"Gram matrix has rank {np.linalg.matrix_rank(gram)} < {d}; use ridge > 0")
    try:
        factor = cho_factor(reg, lower=True)
    except LinAlgError as exc:
        raise RankDeficientError(f"regularized Gram matrix is not positive definite: {exc}") from exc
    theta = cho_solve(factor, Z.T @ Y).T
    resid = Y - Z @ theta.T
    return OlsResult(theta, gram, float(np.max(np.abs(resid))), float(ridge))


def ols_fit(data, ridge: float = 0.0) -> OlsResult:
    """Least-squares fit on a :class:`~bilinear_sme.model.Trajectory`."""
    return ols_fit_arrays(data.regressors(), data.targets(), ridge)


def confidence_radius(gram, level: float, w_max: float, ridge: float, n: int) -> float:
    """Per-row radius ``beta`` of the region in the ``(G + ridge I)``-norm.

    ``beta = w_max * sqrt(2 log(n / (1 - level)) + log det((G + ridge I) / ridge))``
    """
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if not ridge > 0:
        raise ValueError(f"ridge must be > 0, got {ridge}")
    gram = np.atleast_2d(np.asarray(gram, dtype=float))
    eig = np.linalg.eigvalsh(gram + ridge * np.eye(gram.shape[0]))
    if eig[0] <= 0:
        raise RankDeficientError("regularized Gram matrix is not positive definite")
    logdet = float(np.sum(np.log(eig / ridge)))
    return w_max * math.sqrt(2.0 * math.log(n / (1.0 - level)) + logdet)


def ols_confidence_diameter(fit: OlsResult, level: float = 0.9, w_max: float = 1.0,
                            ridge: float = 1.0) -> ConfidenceDiameter:
    """Diameter ``2 beta sqrt(n / lambda_min(G + ridge I))`` of the OLS region.

    The region is ``{Theta : ||theta_i - theta_hat_i||_{G + ridge I} <= beta}``
    for each row, with a union bound over the ``n`` rows and ``w_max`` used as
    the sub-Gaussian proxy of the bounded noise.
    """
    n = fit.theta_hat.shape[0]
    beta = confidence_radius(fit.gram, level, w_max, ridge, n)
    lam_min = float(np.linalg.eigvalsh(fit.gram + ridge * np.eye(fit.gram.shape[0]))[0])
    return ConfidenceDiameter(level, 2.0 * beta * math.sqrt(n / lam_min), ridge, beta)


def ols_region_contains(fit: OlsResult, theta, level: float = 0.9, w_max: float = 1.0,
                        ridge: float = 1.0) -> bool:
    """Whether ``theta`` lies in the confidence region around ``fit.theta_hat``."""
    n, d = fit.theta_hat.shape
    beta = confidence_radius(fit.gram, level, w_max, ridge, n)
    V = fit.gram + ridge * np.eye(d)
    err = np.atleast_2d(np.asarray(theta, dtype=float)) - fit.theta_hat
    norms = np.sqrt(np.einsum("ij,jk,ik->i", err, V, err))
    return bool(np.all(norms <= beta))
