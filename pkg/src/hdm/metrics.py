"""FID and Inception Score over caller-supplied features / class probabilities.

No feature network is bundled; with raw pixels as features the result is a
"pixel-FID" and is not comparable to published Inception-v3 numbers.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateCovariance, DimensionMismatch, InvalidDistribution

EIG_CLAMP = 1e-8


def _features(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 2:
        raise DimensionMismatch(f"{name} needs at least 2 rows of features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def _psd_sqrt(S):
    lam, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ V.T


def trace_sqrt_product(S1, S2) -> float:
    """Tr((S1 S2)^{1/2}) via the symmetric similar matrix S1^{1/2} S2 S1^{1/2}."""
    r = _psd_sqrt(S1)
    M = r @ S2 @ r
    lam = np.linalg.eigvalsh(0.5 * (M + M.T))
    tol = EIG_CLAMP * max(1.0, float(np.abs(lam).max(initial=0.0)))
    if lam.size and lam.min() < -tol:
        raise DegenerateCovariance(f"covariance product has eigenvalue {lam.min():.3e} below -{tol:.1e}")
    return float(np.sqrt(np.clip(lam, 0.0, None)).sum())


def fid_from_moments(mu1, sigma1, mu2, sigma2) -> float:
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, float)), np.atleast_1d(np.asarray(mu2, float))
    sigma1, sigma2 = np.atleast_2d(np.asarray(sigma1, float)), np.atleast_2d(np.asarray(sigma2, float))
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape or sigma1.shape != (mu1.size, mu1.size):
        raise DimensionMismatch("mean/covariance dimensions disagree")
    diff = mu1 - mu2
    val = diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * trace_sqrt_product(sigma1, sigma2)
    if val < -1e-6:
        raise DegenerateCovariance(f"FID evaluated to {val:.3e}")
    return max(float(val), 0.0)


def fid(X, Y) -> float:
    """Frechet distance between Gaussian fits (sample covariance, ddof=1) of two feature sets."""
    X, Y = _features(X, "X"), _features(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    return fid_from_moments(
        X.mean(axis=0), np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], -1),
        Y.mean(axis=0), np.cov(Y, rowvar=False, ddof=1).reshape(Y.shape[1], -1),
    )


def inception_score(P) -> float:
    """exp(mean_i KL(p(y|x_i) || p(y))), p(y) the row average."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] < 1:
        raise InvalidDistribution("class-probability table must be 2-D and non-empty")
    if np.any(~np.isfinite(P)) or np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > 1e-9):
        raise InvalidDistribution("every row must be a probability vector")
    py = P.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * (np.log(P) - np.log(py)), 0.0)
    return float(np.exp(terms.sum(axis=1).mean()))
