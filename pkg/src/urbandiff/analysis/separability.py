"""Cluster quality of planar embeddings: k-NN accuracy, silhouette, betweenness."""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import cdist

from ..errors import AnalysisError


def city_separability(
    points: np.ndarray, labels: list[str] | np.ndarray, k: int = 10
) -> dict:
    """Leave-one-out k-NN accuracy and mean silhouette over labeled points.

    Cities with fewer than two points are excluded (their label can never win
    a leave-one-out vote) and reported in the result.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.shape[0] != labels.shape[0]:
        raise AnalysisError("points and labels must align")
    unique, counts = np.unique(labels, return_counts=True)
    excluded = [str(u) for u, c in zip(unique, counts) if c < 2]
    keep = ~np.isin(labels, excluded)
    pts = points[keep]
    labs = labels[keep]
    if len(np.unique(labs)) < 2:
        raise AnalysisError("separability needs at least 2 cities with 2+ points")

    n = pts.shape[0]
    dists = cdist(pts, pts)
    np.fill_diagonal(dists, np.inf)
    k_eff = min(k, n - 1)
    correct = 0
    for i in range(n):
        order = np.argsort(dists[i], kind="stable")[:k_eff]
        votes: dict[str, list[float]] = {}
        for j in order:
            votes.setdefault(str(labs[j]), []).append(dists[i, j])
        # Majority vote; ties break toward the nearer class, then the
        # lexicographically smaller label, so the result is deterministic.
        best = min(votes.items(), key=lambda kv: (-len(kv[1]), sum(kv[1]), kv[0]))
        if best[0] == str(labs[i]):
            correct += 1

    silhouettes = np.zeros(n)
    for i in range(n):
        same = (labs == labs[i]) & (np.arange(n) != i)
        a = float(dists[i, same].mean())
        b = min(
            float(dists[i, labs == other].mean())
            for other in np.unique(labs)
            if other != labs[i]
        )
        silhouettes[i] = 0.0 if max(a, b) == 0.0 else (b - a) / max(a, b)

    return {
        "knn_accuracy": correct / n,
        "silhouette": float(silhouettes.mean()),
        "k": k_eff,
        "n_used": n,
        "excluded_cities": excluded,
    }


def betweenness_statistic(
    transfer_points: np.ndarray,
    source_points: np.ndarray,
    target_points: np.ndarray,
) -> float:
    """Fraction of transfer points inside the source-target centroid capsule.

    The capsule is the set of points within half the inter-centroid distance
    of the segment joining the two cluster centroids, a direct formalization
    of latents "positioned between" two city clusters.
    """
    transfer = np.atleast_2d(np.asarray(transfer_points, dtype=np.float64))
    source_c = np.asarray(source_points, dtype=np.float64).mean(axis=0)
    target_c = np.asarray(target_points, dtype=np.float64).mean(axis=0)
    if transfer.shape[0] == 0:
        raise AnalysisError("betweenness needs at least one transfer point")
    axis = target_c - source_c
    length_sq = float(axis @ axis)
    radius = 0.5 * np.sqrt(length_sq)
    inside = 0
    for p in transfer:
        if length_sq == 0.0:
            dist = float(np.linalg.norm(p - source_c))
        else:
            frac = np.clip(float((p - source_c) @ axis) / length_sq, 0.0, 1.0)
            dist = float(np.linalg.norm(p - (source_c + frac * axis)))
        if dist <= radius:
            inside += 1
    return inside / transfer.shape[0]
