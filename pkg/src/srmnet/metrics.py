"""PSNR and single-scale SSIM on [0,1]-scaled images."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ImageTooSmall, ShapeMismatch
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_LUMA = (0.299, 0.587, 0.114)


def _as_bchw(x) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected a (B,C,H,W) array, got shape {arr.shape}")
    return arr


def psnr(a, b) -> float:
    """10 log10(1 / MSE) with peak 1; +inf when the inputs are identical."""
    xa, xb = _as_bchw(a), _as_bchw(b)
    if xa.shape != xb.shape:
        raise ShapeMismatch(f"psnr operands differ: {xa.shape} vs {xb.shape}")
    mse = float(np.mean((xa.astype(np.float64) - xb.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _to_luma(arr: np.ndarray) -> np.ndarray:
    if arr.shape[1] == 3:
        r, g, b = arr[:, 0], arr[:, 1], arr[:, 2]
        return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b
    if arr.shape[1] == 1:
        return arr[:, 0]
    raise ShapeMismatch(f"ssim needs 1 or 3 channels, got {arr.shape[1]}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _blur_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, valid positions only
    t = np.tensordot(sliding_window_view(img, len(g), axis=1), g, axes=([2], [0]))
    return np.tensordot(sliding_window_view(t, len(g), axis=0), g, axes=([2], [0]))


def ssim(a, b) -> float:
    """Mean structural similarity over valid 11x11 Gaussian windows.

    Inputs are converted to luma (0.299 R + 0.587 G + 0.114 B) first;
    constants K1=0.01, K2=0.03 with dynamic range 1.
    """
    xa, xb = _as_bchw(a), _as_bchw(b)
    if xa.shape != xb.shape:
        raise ShapeMismatch(f"ssim operands differ: {xa.shape} vs {xb.shape}")
    if xa.shape[2] < SSIM_WINDOW or xa.shape[3] < SSIM_WINDOW:
        raise ImageTooSmall(
            f"ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {xa.shape[2]}x{xa.shape[3]}")
    la = _to_luma(xa.astype(np.float64))
    lb = _to_luma(xb.astype(np.float64))
    g = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2

    scores = []
    for ia, ib in zip(la, lb):
        mu_a = _blur_valid(ia, g)
        mu_b = _blur_valid(ib, g)
        var_a = _blur_valid(ia * ia, g) - mu_a * mu_a
        var_b = _blur_valid(ib * ib, g) - mu_b * mu_b
        cov = _blur_valid(ia * ib, g) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))
