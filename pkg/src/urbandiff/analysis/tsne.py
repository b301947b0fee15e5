"""Exact t-SNE with a monotone descent phase.

Desk-scale embedding sets are small enough for the exact O(N^2) algorithm,
which buys two things the usual Barnes-Hut implementations cannot promise:
an exact per-iteration KL divergence trace, and strict non-increase of that
trace after early exaggeration ends (enforced by backtracking on the step
size instead of momentum).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import AnalysisError
from ..seeding import rng_for

_P_MIN = 1e-12


@dataclass
class TsneResult:
    points: np.ndarray
    kl_trace: list[float]
    perplexity: float
    notes: list[str] = field(default_factory=list)


def _squared_distances(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, None)


def _conditional_probabilities(distances: np.ndarray, perplexity: float) -> np.ndarray:
    """Row-stochastic p(j|i) with per-row precision tuned to the perplexity."""
    n = distances.shape[0]
    target_entropy = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(distances[i], i)
        beta_lo, beta_hi = 0.0, np.inf
        beta = 1.0
        for _ in range(64):
            logits = -beta * row
            logits -= logits.max()
            p = np.exp(logits)
            total = p.sum()
            p /= total
            entropy = -np.sum(p * np.log(np.clip(p, _P_MIN, None)))
            if abs(entropy - target_entropy) < 1e-7:
                break
            if entropy > target_entropy:
                beta_lo = beta
                beta = beta * 2.0 if np.isinf(beta_hi) else 0.5 * (beta_lo + beta_hi)
            else:
                beta_hi = beta
                beta = 0.5 * (beta_lo + beta_hi)
        P[i, np.arange(n) != i] = p
    return P


def _kl_and_grad(P: np.ndarray, Y: np.ndarray) -> tuple[float, np.ndarray]:
    d = _squared_distances(Y)
    w = 1.0 / (1.0 + d)
    np.fill_diagonal(w, 0.0)
    Q = np.clip(w / w.sum(), _P_MIN, None)
    mask = P > 0
    kl = float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))
    pq = (P - Q) * w
    grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ Y
    return kl, grad


def tsne_embed(
    X: np.ndarray,
    perplexity: float = 30.0,
    seed: int = 0,
    n_iter: int = 600,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 150,
    learning_rate: float | None = None,
) -> TsneResult:
    """Embed rows of X into the plane.

    First ``exaggeration_iters`` iterations run momentum gradient descent on
    the exaggerated affinities; the remaining iterations use plain descent
    with backtracking, so the recorded KL trace never increases.  All-equal
    inputs are jittered (with a warning) rather than rejected, and an
    oversized perplexity is reduced to (n-1)/3 with a note.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 4:
        raise AnalysisError(f"t-SNE needs a 2-D array with at least 4 samples, got {X.shape}")
    n = X.shape[0]
    notes: list[str] = []
    rng = rng_for(seed, "tsne")

    distances = _squared_distances(X)
    if float(distances.max()) == 0.0:
        warnings.warn("all t-SNE inputs identical; adding jitter", stacklevel=2)
        notes.append("inputs identical: jittered with scale 1e-6")
        X = X + rng.normal(0.0, 1e-6, size=X.shape)
        distances = _squared_distances(X)

    if n <= 3 * perplexity:
        reduced = max(2.0, (n - 1) / 3.0)
        notes.append(f"perplexity {perplexity} reduced to {reduced} for {n} samples")
        perplexity = reduced

    cond = _conditional_probabilities(distances, perplexity)
    P = (cond + cond.T) / (2.0 * n)
    P = np.clip(P, _P_MIN, None)

    Y = rng.normal(0.0, 1e-4, size=(n, 2))
    if learning_rate is None:
        learning_rate = max(n / early_exaggeration, 50.0)

    # Phase one: exaggerated affinities with momentum, the standard warm-up
    # that separates clusters before fine convergence.
    velocity = np.zeros_like(Y)
    exaggerated = P * early_exaggeration
    for it in range(min(exaggeration_iters, n_iter)):
        _, grad = _kl_and_grad(exaggerated, Y)
        momentum = 0.5 if it < exaggeration_iters // 2 else 0.8
        velocity = momentum * velocity - learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)

    # Phase two: plain descent on the true affinities; a step is only taken
    # if it does not increase KL, making the trace monotone by construction.
    kl_trace: list[float] = []
    kl_cur, grad = _kl_and_grad(P, Y)
    kl_trace.append(kl_cur)
    step = learning_rate
    for _ in range(max(0, n_iter - exaggeration_iters)):
        candidate = Y - step * grad
        kl_new, grad_new = _kl_and_grad(P, candidate)
        tries = 0
        while kl_new > kl_cur and tries < 40:
            step *= 0.5
            candidate = Y - step * grad
            kl_new, grad_new = _kl_and_grad(P, candidate)
            tries += 1
        if kl_new > kl_cur:
            kl_trace.append(kl_cur)
            continue
        Y, kl_cur, grad = candidate, kl_new, grad_new
        kl_trace.append(kl_cur)
        step = min(step * 1.1, learning_rate * 10.0)
    return TsneResult(points=Y - Y.mean(axis=0), kl_trace=kl_trace, perplexity=perplexity, notes=notes)
