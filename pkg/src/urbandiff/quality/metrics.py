"""Classical full-reference image metrics: PSNR, SSIM, MS-SSIM, and FSIM.

All metrics accept ``(H, W, 3)`` uint8 RGB arrays (the native output format of
the sampler) or float arrays already scaled to [0, 255].  Structural metrics
operate on the BT.601 luminance channel, matching their published reference
implementations.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from ..errors import EvalError

PSNR_CAP_DB = 99.0

# Canonical five-scale MS-SSIM weights from the original multi-scale paper.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_K1 = 0.01
_K2 = 0.03
_L = 255.0


def _as_float_rgb(image: np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise EvalError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    return arr.astype(np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    fa = _as_float_rgb(a, "first image")
    fb = _as_float_rgb(b, "second image")
    if fa.shape != fb.shape:
        raise EvalError(f"image shapes differ: {fa.shape} vs {fb.shape}")
    return fa, fb


def to_luminance(image: np.ndarray) -> np.ndarray:
    """BT.601 luma of an RGB array, as float64 in [0, 255]."""
    arr = _as_float_rgb(image, "image")
    return 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over all RGB channels.

    Identical images would give infinite PSNR; the value is capped at
    ``PSNR_CAP_DB`` (99 dB) so report arithmetic stays finite.
    """
    fa, fb = _check_pair(a, b)
    mse = float(np.mean((fa - fb) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    value = 20.0 * np.log10(_L / np.sqrt(mse))
    return float(min(value, PSNR_CAP_DB))


def gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    """Normalised 2-D Gaussian kernel used by the SSIM family."""
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_components(
    la: np.ndarray, lb: np.ndarray, window: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window luminance term and contrast-structure term ("valid" region)."""
    c1 = (_K1 * _L) ** 2
    c2 = (_K2 * _L) ** 2
    mu1 = convolve2d(la, window, mode="valid")
    mu2 = convolve2d(lb, window, mode="valid")
    mu1_sq = mu1 * mu1
    mu2_sq = mu2 * mu2
    mu12 = mu1 * mu2
    sigma1_sq = convolve2d(la * la, window, mode="valid") - mu1_sq
    sigma2_sq = convolve2d(lb * lb, window, mode="valid") - mu2_sq
    sigma12 = convolve2d(la * lb, window, mode="valid") - mu12
    luminance = (2.0 * mu12 + c1) / (mu1_sq + mu2_sq + c1)
    contrast_structure = (2.0 * sigma12 + c2) / (sigma1_sq + sigma2_sq + c2)
    return luminance, contrast_structure


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Follows the original single-scale formulation: Gaussian-weighted local
    moments on the luminance channel, K1=0.01, K2=0.03, dynamic range 255,
    averaged over the valid (unpadded) window positions.
    """
    fa, fb = _check_pair(a, b)
    la = to_luminance(fa.astype(np.uint8) if fa.dtype == np.uint8 else fa)
    lb = to_luminance(fb)
    if min(la.shape) < _SSIM_WINDOW:
        raise EvalError(
            f"images must be at least {_SSIM_WINDOW}px per side for SSIM, got {la.shape}"
        )
    luminance, cs = _ssim_components(la, lb, gaussian_window())
    return float(np.mean(luminance * cs))


def _downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 average pooling with stride 2 (truncating odd edges)."""
    h = (img.shape[0] // 2) * 2
    w = (img.shape[1] // 2) * 2
    c = img[:h, :w]
    return 0.25 * (c[0::2, 0::2] + c[1::2, 0::2] + c[0::2, 1::2] + c[1::2, 1::2])


def ms_ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Multi-scale SSIM with the canonical five-scale exponent weights.

    The full five-scale product needs at least 176px per side (11px window
    after four halvings).  Smaller inputs drop the coarsest scales instead of
    failing, renormalising the remaining weights to sum to one; at 64px that
    leaves three scales.  Identical inputs score exactly 1.0 at any size.
    """
    fa, fb = _check_pair(a, b)
    la = to_luminance(fa)
    lb = to_luminance(fb)
    side = min(la.shape)
    if side < _SSIM_WINDOW:
        raise EvalError(
            f"images must be at least {_SSIM_WINDOW}px per side for MS-SSIM, got {la.shape}"
        )
    n_scales = len(MS_SSIM_WEIGHTS)
    usable = 1
    while usable < n_scales and (side // (2**usable)) >= _SSIM_WINDOW:
        usable += 1
    weights = np.asarray(MS_SSIM_WEIGHTS[:usable], dtype=np.float64)
    weights = weights / weights.sum()

    window = gaussian_window()
    score = 1.0
    for level in range(usable):
        luminance, cs = _ssim_components(la, lb, window)
        if level == usable - 1:
            term = float(np.mean(luminance * cs))
        else:
            term = float(np.mean(cs))
        # Negative local covariance can push a scale term below zero; clamp
        # before the fractional power like the reference implementation does.
        score *= max(term, 0.0) ** weights[level]
        if level != usable - 1:
            la = _downsample2(la)
            lb = _downsample2(lb)
    return float(score)


# ---------------------------------------------------------------------------
# FSIM: phase congruency + gradient magnitude similarity.
# ---------------------------------------------------------------------------

_FSIM_SCALES = 4
_FSIM_ORIENTS = 4
_FSIM_MIN_WAVELENGTH = 6.0
_FSIM_MULT = 2.0
_FSIM_SIGMA_ONF = 0.55
_FSIM_DTHETA_SIGMA = 1.2
_FSIM_T1 = 0.85
_FSIM_T2 = 160.0
_FSIM_EPS = 1e-4

_SCHARR_X = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]]) / 16.0
_SCHARR_Y = _SCHARR_X.T


def _frequency_grid(rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalised radius and angle of each FFT bin, in FFT (unshifted) order."""
    fy = np.fft.fftfreq(rows)[:, None]
    fx = np.fft.fftfreq(cols)[None, :]
    radius = np.sqrt(fx**2 + fy**2)
    radius[0, 0] = 1.0  # avoid log(0) at DC; the DC gain is zeroed below
    theta = np.arctan2(-fy, fx)
    return radius, theta


def log_gabor_bank(rows: int, cols: int) -> list[list[np.ndarray]]:
    """Frequency-domain log-Gabor filters: ``bank[orientation][scale]``.

    Four orientations (0, 45, 90, 135 degrees) times four octave-spaced
    scales starting at wavelength 6, each radial profile multiplied by a
    Butterworth low-pass to suppress ringing at the Nyquist corners.
    """
    radius, theta = _frequency_grid(rows, cols)
    lowpass = 1.0 / (1.0 + (radius / 0.45) ** 30)
    radials = []
    for s in range(_FSIM_SCALES):
        wavelength = _FSIM_MIN_WAVELENGTH * (_FSIM_MULT**s)
        f0 = 1.0 / wavelength
        log_ratio = np.log(radius / f0)
        radial = np.exp(-(log_ratio**2) / (2.0 * np.log(_FSIM_SIGMA_ONF) ** 2))
        radial = radial * lowpass
        radial[0, 0] = 0.0
        radials.append(radial)

    sigma_theta = (np.pi / _FSIM_ORIENTS) / _FSIM_DTHETA_SIGMA
    bank: list[list[np.ndarray]] = []
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    for o in range(_FSIM_ORIENTS):
        angle = o * np.pi / _FSIM_ORIENTS
        # Angular distance on the circle, computed through sin/cos so the
        # wrap at +-pi does not produce a seam in the spread function.
        ds = sin_t * np.cos(angle) - cos_t * np.sin(angle)
        dc = cos_t * np.cos(angle) + sin_t * np.sin(angle)
        dtheta = np.abs(np.arctan2(ds, dc))
        spread = np.exp(-(dtheta**2) / (2.0 * sigma_theta**2))
        bank.append([spread * radial for radial in radials])
    return bank


def phase_congruency(lum: np.ndarray, bank: list[list[np.ndarray]] | None = None) -> np.ndarray:
    """Phase congruency map in [0, 1] from the log-Gabor energy model.

    For each orientation the complex filter responses are summed over scales;
    congruent phase makes the summed magnitude approach the summed amplitude.
    The noise-threshold term of the full published estimator is omitted (T=0),
    which only rescales smooth regions and cancels in the FSIM ratio.
    """
    rows, cols = lum.shape
    if bank is None:
        bank = log_gabor_bank(rows, cols)
    spectrum = np.fft.fft2(lum)
    total_energy = np.zeros((rows, cols))
    total_amplitude = np.zeros((rows, cols))
    for orientation_filters in bank:
        sum_complex = np.zeros((rows, cols), dtype=np.complex128)
        amplitude = np.zeros((rows, cols))
        for filt in orientation_filters:
            response = np.fft.ifft2(spectrum * filt)
            sum_complex += response
            amplitude += np.abs(response)
        total_energy += np.abs(sum_complex)
        total_amplitude += amplitude
    return total_energy / (total_amplitude + _FSIM_EPS)


def gradient_magnitude(lum: np.ndarray) -> np.ndarray:
    """Scharr gradient magnitude with symmetric boundary handling."""
    gx = convolve2d(lum, _SCHARR_X, mode="same", boundary="symm")
    gy = convolve2d(lum, _SCHARR_Y, mode="same", boundary="symm")
    return np.sqrt(gx**2 + gy**2)


def fsim(a: np.ndarray, b: np.ndarray, gradient_only: bool = False) -> float:
    """Feature similarity: phase congruency x gradient magnitude.

    Per the original definition the map ``S = S_pc * S_g`` is averaged with
    the pointwise maximum of the two phase-congruency maps as weights.

    ``gradient_only=True`` skips the log-Gabor stage, scoring gradient
    similarity weighted by gradient magnitude instead.  That mode is a cheap
    screening shortcut for interactive loops; reported evaluation numbers
    always use the full metric.
    """
    fa, fb = _check_pair(a, b)
    la = to_luminance(fa)
    lb = to_luminance(fb)
    g1 = gradient_magnitude(la)
    g2 = gradient_magnitude(lb)
    s_g = (2.0 * g1 * g2 + _FSIM_T2) / (g1**2 + g2**2 + _FSIM_T2)
    if gradient_only:
        weight = np.maximum(g1, g2)
        denom = float(np.sum(weight))
        if denom == 0.0:
            return 1.0
        return float(np.sum(s_g * weight) / denom)
    bank = log_gabor_bank(*la.shape)
    pc1 = phase_congruency(la, bank)
    pc2 = phase_congruency(lb, bank)
    s_pc = (2.0 * pc1 * pc2 + _FSIM_T1) / (pc1**2 + pc2**2 + _FSIM_T1)
    weight = np.maximum(pc1, pc2)
    denom = float(np.sum(weight))
    if denom == 0.0:
        return 1.0
    return float(np.sum(s_pc * s_g * weight) / denom)
