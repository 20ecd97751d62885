"""Image quality (PSNR, SSIM, MS-SSIM), detection accuracy, and TV distance."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# Standard five-scale MS-SSIM exponents, finest scale first; truncated to the
# feasible number of scales and renormalized to sum to one.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
# The window shrinks to the image side at coarse scales, but never below this.
MS_SSIM_MIN_SIDE = 4


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    if max_val <= 0:
        raise ValueError("max_val must be positive")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_val**2 / mse)


def _local_stats(a: np.ndarray, b: np.ndarray, win: int):
    # Windows over the last two axes; leading axes are a batch.
    wa = sliding_window_view(a, (win, win), axis=(-2, -1))
    wb = sliding_window_view(b, (win, win), axis=(-2, -1))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = (wa * wa).mean(axis=(-2, -1)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-2, -1)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-2, -1)) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def _ssim_terms(a, b, max_val, win):
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a, mu_b, var_a, var_b, cov = _local_stats(a, b, win)
    lum = (2 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(a, b, max_val: float = 1.0, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all stride-1 uniform ``window x window`` patches."""
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    if min(a.shape) < window:
        raise ValueError(f"image {a.shape} is smaller than the {window}x{window} window")
    if np.array_equal(a, b):
        return 1.0
    lum, cs = _ssim_terms(a, b, max_val, window)
    return float(np.mean(lum * cs))


def max_ms_ssim_scales(side: int) -> int:
    scales = 0
    while side >= MS_SSIM_MIN_SIDE and scales < len(MS_SSIM_WEIGHTS):
        scales += 1
        side //= 2
    return scales


def _downsample(x: np.ndarray) -> np.ndarray:
    h, w = (x.shape[-2] // 2) * 2, (x.shape[-1] // 2) * 2
    x = x[..., :h, :w]
    return x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2).mean(axis=(-3, -1))


def ms_ssim_batch(a, b, max_val: float = 1.0, scales: int | None = None) -> np.ndarray:
    """MS-SSIM of each image pair in two ``(n, h, w)`` stacks.

    Contrast-structure terms are taken at every scale, luminance only at the
    coarsest. At coarse scales the window shrinks to the image side. Negative
    terms are clamped to zero so every value stays in [0, 1].
    """
    a, b = _pair(a, b)
    if a.ndim != 3:
        raise ValueError("expected a stack of 2-D images")
    feasible = max_ms_ssim_scales(min(a.shape[1:]))
    if scales is None:
        scales = feasible
    if scales < 1 or scales > feasible:
        raise ValueError(f"image {a.shape[1:]} supports at most {feasible} MS-SSIM scales, requested {scales}")
    same = np.all(a == b, axis=(1, 2))
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    result = np.ones(len(a))
    for j in range(scales):
        win = min(SSIM_WINDOW, *a.shape[1:])
        lum, cs = _ssim_terms(a, b, max_val, win)
        term = (lum * cs if j == scales - 1 else cs).mean(axis=(1, 2))
        result *= np.maximum(term, 0.0) ** weights[j]
        if j < scales - 1:
            a, b = _downsample(a), _downsample(b)
    result = np.minimum(result, 1.0)
    result[same] = 1.0
    return result


def ms_ssim(a, b, max_val: float = 1.0, scales: int | None = None) -> float:
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise ValueError("expected a 2-D image")
    return float(ms_ssim_batch(a[None], b[None], max_val, scales)[0])


def accuracy(predictions, truth) -> float:
    predictions = np.asarray(predictions)
    truth = np.asarray(truth)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    if truth.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == truth))


def tv_distance(p, q) -> float:
    """Total-variation distance between two distributions on the same support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions have different support sizes")
    for name, d in (("p", p), ("q", q)):
        if abs(d.sum() - 1.0) > 1e-9 or np.any(d < 0):
            raise ValueError(f"{name} is not a probability distribution")
    return float(0.5 * np.abs(p - q).sum())
