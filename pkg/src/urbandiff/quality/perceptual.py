"""Feature-space metrics: LPIPS-style distance, FID, Gram style and content loss."""

from __future__ import annotations

import warnings

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import EvalError
from .features import TAP_NAMES, FeatureExtractor, _image_batch_to_tensor, pooled_features

_EIG_CLIP_TOL = -1e-6


def _single_image_taps(extractor: FeatureExtractor, image: np.ndarray) -> dict[str, torch.Tensor]:
    extractor.eval()
    with torch.no_grad():
        taps = extractor.features(_image_batch_to_tensor(image))
    return {name: value[0] for name, value in taps.items()}


def lpips(a: np.ndarray, b: np.ndarray, extractor: FeatureExtractor) -> float:
    """Perceptual distance: unit-normalized per-tap feature differences.

    At every spatial position each tap's feature vector is normalized to unit
    length; the squared difference is averaged over space and summed over
    channels and taps.  Tap weights are all one — the published metric learns
    them from human judgements, which has no desk-scale analogue.
    """
    taps_a = _single_image_taps(extractor, a)
    taps_b = _single_image_taps(extractor, b)
    total = 0.0
    for name in TAP_NAMES:
        fa = taps_a[name].double()
        fb = taps_b[name].double()
        na = fa / fa.norm(dim=0, keepdim=True).clamp_min(1e-10)
        nb = fb / fb.norm(dim=0, keepdim=True).clamp_min(1e-10)
        total += float(((na - nb) ** 2).sum(dim=0).mean())
    return total


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [-1e-6, 0) are roundoff and clipped silently; anything more
    negative is clipped too but flagged, since it means the input was not the
    near-PSD matrix this decomposition assumes.
    """
    sym = 0.5 * (matrix + matrix.T)
    vals, vecs = np.linalg.eigh(sym)
    if float(vals.min(initial=0.0)) < _EIG_CLIP_TOL:
        warnings.warn(
            f"clipping eigenvalue {vals.min():.3e} below tolerance {_EIG_CLIP_TOL:.0e}",
            stacklevel=3,
        )
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _mean_and_cov(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = features.mean(axis=0)
    if features.shape[0] < 2:
        return mu, np.zeros((features.shape[1], features.shape[1]))
    return mu, np.cov(features, rowvar=False)


def fid(set_a: np.ndarray, set_b: np.ndarray, extractor: FeatureExtractor) -> float:
    """Fréchet distance between pooled-feature Gaussians of two image sets."""
    if len(set_a) == 0 or len(set_b) == 0:
        raise EvalError("FID needs two nonempty image sets")
    feats_a = pooled_features(extractor, np.asarray(set_a))
    feats_b = pooled_features(extractor, np.asarray(set_b))
    return fid_from_features(feats_a, feats_b)


def fid_from_features(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """FID on precomputed feature matrices (rows are samples)."""
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if not (np.all(np.isfinite(feats_a)) and np.all(np.isfinite(feats_b))):
        raise EvalError("non-finite feature values")
    dim = feats_a.shape[1]
    for label, feats in (("A", feats_a), ("B", feats_b)):
        if feats.shape[0] <= dim:
            warnings.warn(
                f"set {label} has {feats.shape[0]} samples for {dim}-d features; "
                "covariance estimate will be rank-deficient",
                stacklevel=2,
            )
    mu_a, cov_a = _mean_and_cov(feats_a)
    mu_b, cov_b = _mean_and_cov(feats_b)
    half_a = _sqrt_psd(cov_a)
    product = half_a @ cov_b @ half_a
    cross_vals = np.linalg.eigvalsh(0.5 * (product + product.T))
    if float(cross_vals.min(initial=0.0)) < _EIG_CLIP_TOL:
        warnings.warn(
            f"clipping eigenvalue {cross_vals.min():.3e} in covariance product",
            stacklevel=2,
        )
    trace_sqrt = float(np.sum(np.sqrt(np.clip(cross_vals, 0.0, None))))
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def gram(features: torch.Tensor | np.ndarray) -> np.ndarray:
    """Normalized Gram matrix G = (1/(C*N)) F~ F~^T of a C x H x W feature map.

    Symmetric and PSD by construction; scales quadratically with the features.
    """
    if isinstance(features, torch.Tensor):
        arr = features.detach().cpu().double().numpy()
    else:
        arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 3:
        raise EvalError(f"gram expects C x H x W features, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise EvalError("non-finite feature values")
    c = arr.shape[0]
    flat = arr.reshape(c, -1)
    n = flat.shape[1]
    return (flat @ flat.T) / (c * n)


def style_loss(
    g_img: np.ndarray,
    r_img: np.ndarray,
    extractor: FeatureExtractor,
    layers: tuple[str, ...] = TAP_NAMES,
) -> float:
    """Scaled mean squared Gram difference over the requested taps.

    Per layer: (1/4) * (1/C^2) * ||G(g) - G(r)||_F^2, averaged over layers and
    scaled by 1e4 so desk-scale numbers land in a readable range.
    """
    taps_g = _single_image_taps(extractor, g_img)
    taps_r = _single_image_taps(extractor, r_img)
    per_layer = []
    for name in layers:
        if name not in taps_g:
            raise EvalError(f"extractor has no tap named {name!r}")
        feats_g = taps_g[name]
        if feats_g.ndim != 3:
            raise EvalError(f"tap {name!r} is not a spatial feature map")
        delta = gram(feats_g) - gram(taps_r[name])
        c = feats_g.shape[0]
        per_layer.append(0.25 / (c * c) * float(np.sum(delta * delta)))
    return 1e4 * float(np.mean(per_layer))


def content_loss(
    g_img: np.ndarray, real_set: np.ndarray, extractor: FeatureExtractor
) -> float:
    """Mean squared distance to the real set in pooled conv4 space.

    Each image's conv4 tap is adaptive-average-pooled to 32x32 and flattened;
    the loss is the mean over real images of the squared L2 distance to the
    generated image's vector.
    """
    reals = np.asarray(real_set)
    if reals.ndim == 3:
        reals = reals[None]
    if reals.shape[0] == 0:
        raise EvalError("content loss needs a nonempty real set")

    def pooled_vec(image: np.ndarray) -> np.ndarray:
        tap = _single_image_taps(extractor, image)["conv4"]
        pooled = F.adaptive_avg_pool2d(tap[None], (32, 32))
        return pooled.double().numpy().reshape(-1)

    vec_g = pooled_vec(g_img)
    total = 0.0
    for i in range(reals.shape[0]):
        diff = vec_g - pooled_vec(reals[i])
        total += float(diff @ diff)
    return total / reals.shape[0]
