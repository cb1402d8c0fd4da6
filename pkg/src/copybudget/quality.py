"""Exact Fréchet distance between feature sets and the quality transform.

Works on small dense feature matrices; the matrix square root is computed
by eigendecomposition of the symmetrized product, so no iterative solver
is involved.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Eigenvalues of a nominally-PSD matrix above this floor are treated as
# exact zeros; anything more negative is a genuine input error.
_EIG_CLAMP = -1e-10

Q_EPSILON = 1e-6


@dataclass(frozen=True)
class FeatureStats:
    """Empirical mean and covariance (n-1 denominator) of a feature batch."""

    mean: np.ndarray
    cov: np.ndarray
    count: int


@dataclass(frozen=True)
class QualityScore:
    fid: float
    q: float


def feature_stats(features: np.ndarray) -> FeatureStats:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ValueError("features must be a 2-D array (n, q)")
    n = features.shape[0]
    if n < 2:
        raise ValueError("need at least 2 feature vectors for a covariance")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return FeatureStats(mean=mean, cov=cov, count=n)


def matrix_sqrt_psd(a: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root S with S @ S == a (up to clamping)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.allclose(a, a.T, atol=1e-8):
        raise ValueError("matrix is not symmetric within tolerance")
    sym = 0.5 * (a + a.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min(initial=0.0) < _EIG_CLAMP * max(1.0, abs(eigvals).max(initial=1.0)):
        raise ValueError("matrix has significantly negative eigenvalues")
    eigvals = np.clip(eigvals, 0.0, None)
    root = (eigvecs * np.sqrt(eigvals)) @ eigvecs.T
    return 0.5 * (root + root.T)


def fid(sx: FeatureStats, sy: FeatureStats) -> float:
    """||m_x - m_y||^2 + Tr(C_x + C_y - 2 (C_x C_y)^{1/2}).

    The cross term is evaluated in the symmetrized form
    sqrt(sqrt(C_x) C_y sqrt(C_x)), which has the same trace as
    (C_x C_y)^{1/2} and stays PSD under floating point.
    """
    if sx.mean.shape != sy.mean.shape:
        raise ValueError("feature dimensions differ")
    mean_gap = float(np.sum((sx.mean - sy.mean) ** 2))
    root_x = matrix_sqrt_psd(sx.cov)
    inner = root_x @ sy.cov @ root_x
    cross = matrix_sqrt_psd(inner)
    value = mean_gap + float(np.trace(sx.cov) + np.trace(sy.cov) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def model_quality(fid_value: float) -> float:
    """Q(M) = 100 / (FID + 1e-6); strictly decreasing in FID."""
    if fid_value < 0:
        raise ValueError("FID must be nonnegative")
    return 100.0 / (fid_value + Q_EPSILON)


def quality_score(fid_value: float) -> QualityScore:
    return QualityScore(fid=fid_value, q=model_quality(fid_value))
