"""Peak signal-to-noise ratio and structural similarity."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def psnr(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf when the images are identical."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_window() -> np.ndarray:
    r = SSIM_WINDOW // 2
    d = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _windowed_mean(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Weighted local mean over valid (fully inside) window positions."""
    k = window.shape[0]
    hv = plane.shape[0] - k + 1
    wv = plane.shape[1] - k + 1
    out = np.zeros((hv, wv), dtype=np.float64)
    for dy in range(k):
        for dx in range(k):
            out += window[dy, dx] * plane[dy : dy + hv, dx : dx + wv]
    return out


def ssim(a: Tensor, b: Tensor, peak: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    if a.data.shape != b.data.shape:
        raise ValueError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    if a.c != 1:
        raise ValueError(f"expected single-channel tensors, got c={a.c}")
    if a.h < SSIM_WINDOW or a.w < SSIM_WINDOW:
        raise ValueError(
            f"image {a.h}x{a.w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    window = _ssim_window()
    total = 0.0
    count = 0
    for i in range(a.n):
        pa = a.data[i, 0].astype(np.float64)
        pb = b.data[i, 0].astype(np.float64)
        mu_a = _windowed_mean(pa, window)
        mu_b = _windowed_mean(pb, window)
        var_a = _windowed_mean(pa * pa, window) - mu_a * mu_a
        var_b = _windowed_mean(pb * pb, window) - mu_b * mu_b
        cov = _windowed_mean(pa * pb, window) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        smap = num / den
        total += float(smap.sum())
        count += smap.size
    return total / count
