"""Principal component analysis by mean-centered covariance eigendecomposition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import AnalysisError


@dataclass
class PcaProjection:
    """Fitted projection: components are rows, orthonormal, variance-ordered."""

    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    notes: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.components.shape[0]


def pca_project(X: np.ndarray, k: int) -> tuple[np.ndarray, PcaProjection]:
    """Project rows of X onto the top-k principal components.

    Implemented directly from the definition: eigendecomposition of the
    sample covariance of mean-centered data, components ordered by
    decreasing eigenvalue.  Requesting more components than the data's rank
    (min(samples-1, features)) clips k and records a note.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise AnalysisError(f"PCA needs a 2-D array with at least 2 samples, got {X.shape}")
    if k < 1:
        raise AnalysisError(f"component count must be positive, got {k}")
    n, d = X.shape
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]

    notes: list[str] = []
    max_rank = min(n - 1, d)
    k_eff = min(k, max_rank)
    if k_eff < k:
        notes.append(f"requested {k} components clipped to rank bound {k_eff}")
    total = float(eigvals.sum())
    components = eigvecs[:, :k_eff].T
    explained = eigvals[:k_eff]
    ratio = explained / total if total > 0.0 else np.zeros_like(explained)
    projection = PcaProjection(
        components=components,
        mean=mean,
        explained_variance=explained,
        explained_variance_ratio=ratio,
        notes=notes,
    )
    return centered @ components.T, projection


def pca_inverse(Y: np.ndarray, projection: PcaProjection) -> np.ndarray:
    """Map projected coordinates back to the original space."""
    return np.asarray(Y, dtype=np.float64) @ projection.components + projection.mean
