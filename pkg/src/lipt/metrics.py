"""Y-channel image quality metrics and bicubic resampling."""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .io import ImageRGB8

__all__ = ["rgb_to_y", "shave", "psnr", "ssim", "gaussian_window", "keys_cubic", "bicubic_resize"]


def rgb_to_y(img: ImageRGB8) -> np.ndarray:
    """BT.601 luma on [16, 235]: (1, 1, h, w) float64."""
    rgb = img.pixels.astype(np.float64) / 255.0
    y = 65.481 * rgb[..., 0] + 128.553 * rgb[..., 1] + 24.966 * rgb[..., 2] + 16.0
    return y[None, None]


def shave(x: np.ndarray, border: int) -> np.ndarray:
    if border <= 0:
        return x
    if 2 * border >= min(x.shape[-2:]):
        raise ShapeError(f"crop border {border} leaves nothing of a {x.shape[-2:]} image")
    return x[..., border:-border, border:-border]


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric operands differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); ``inf`` when the inputs are identical."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a, b, data_range: float = 255.0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully-contained Gaussian windows of a single-channel image."""
    a, b = _same_shape(a, b)
    a, b = np.squeeze(a), np.squeeze(b)
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a single-channel image, got shape {a.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} is smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2

    def filt(x):
        return np.einsum("ijuv,uv->ij", sliding_window_view(x, (window, window)), g)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def keys_cubic(t, a: float = -0.5):
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


_SCALES = {Fraction(1, 4), Fraction(1, 3), Fraction(1, 2), Fraction(1), Fraction(2), Fraction(3), Fraction(4)}


def _resize_matrix(n_in: int, scale: Fraction) -> np.ndarray:
    n_out = int(round(n_in * scale))
    if n_out < 1:
        raise ShapeError(f"resizing {n_in} pixels by {scale} leaves no output")
    dst = np.arange(n_out, dtype=np.float64)
    src = (dst + 0.5) / float(scale) - 0.5
    base = np.floor(src).astype(np.int64)
    m = np.zeros((n_out, n_in))
    for off in range(-1, 3):
        idx = base + off
        wts = keys_cubic(src - idx)
        np.add.at(m, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), wts)
    return m


def bicubic_resize(x: np.ndarray, scale) -> np.ndarray:
    """Keys (a = -0.5) bicubic resize of the last two axes, edge-clamped,
    pixel-center aligned: src = (dst + 0.5) / scale - 0.5.
    """
    frac = Fraction(scale).limit_denominator(16)
    if frac not in _SCALES:
        raise ValueError(f"unsupported scale {scale}; expected one of 1/4, 1/3, 1/2, 1, 2, 3, 4")
    if frac == 1:
        return x
    rows = _resize_matrix(x.shape[-2], frac)
    cols = _resize_matrix(x.shape[-1], frac)
    y = np.einsum("oh,...hw,pw->...op", rows, np.asarray(x, dtype=np.float64), cols)
    return y.astype(x.dtype, copy=False)
