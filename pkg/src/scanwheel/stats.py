"""Covariance-normalized distances and the shared 0-1000 rank score map."""

from __future__ import annotations

import numpy as np
from scipy.linalg import cholesky, solve_triangular


def sample_covariance(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and (d x d) sample covariance of row observations."""
    mean = X.mean(axis=0)
    Xc = X - mean
    denom = max(X.shape[0] - 1, 1)
    return mean, (Xc.T @ Xc) / denom


def regularize_covariance(cov: np.ndarray, eps_scale: float = 1e-9) -> np.ndarray:
    """Add eps * trace/d to the diagonal until the matrix factors."""
    d = cov.shape[0]
    eps = eps_scale * max(np.trace(cov) / d, np.finfo(float).tiny)
    out = cov
    for _ in range(40):
        try:
            cholesky(out, lower=True)
            return out
        except np.linalg.LinAlgError:
            out = out + eps * np.eye(d)
            eps *= 10.0
    raise np.linalg.LinAlgError("covariance could not be regularized")


def mahalanobis_distances(
    X: np.ndarray,
    mean: np.ndarray | None = None,
    cov: np.ndarray | None = None,
) -> np.ndarray:
    """Mahalanobis distance of each row of X from the distribution center.

    When mean/cov are omitted they are estimated from X itself.  The
    covariance is regularized if (near-)singular.
    """
    X = np.asarray(X, dtype=np.float64)
    if mean is None or cov is None:
        est_mean, est_cov = sample_covariance(X)
        mean = est_mean if mean is None else mean
        cov = est_cov if cov is None else cov
    cov = regularize_covariance(np.asarray(cov, dtype=np.float64))
    L = cholesky(cov, lower=True)
    Z = solve_triangular(L, (X - mean).T, lower=True)
    return np.sqrt(np.sum(Z * Z, axis=0))


def rank_percentiles(values) -> np.ndarray:
    """Fraction of other values strictly below each value, in [0, 1].

    A unique maximum maps to 1.0 and a unique minimum to 0.0; ties share a
    percentile.  A single value maps to 1.0.
    """
    v = np.asarray(values, dtype=np.float64)
    m = v.shape[0]
    if m == 0:
        return np.empty(0)
    if m == 1:
        return np.ones(1)
    below = (v[:, None] > v[None, :]).sum(axis=1)
    return below / (m - 1)


def rank_scores(values) -> list[int]:
    """The shared anomaly score map: round(1000 * rank percentile)."""
    return [int(round(1000.0 * p)) for p in rank_percentiles(values)]
