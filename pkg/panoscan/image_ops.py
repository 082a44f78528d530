from __future__ import annotations

import functools

import numpy as np
from scipy.signal import convolve2d

from panoscan.diffcore import Array
from panoscan.errors import ArgumentError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def to_gray(img: Array) -> Array:
    """Rec.601 luma of an ``(H, W, 3)`` image."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ArgumentError(f'expected an H x W x 3 image, got {img.shape}')
    return np.clip(img @ LUMA_WEIGHTS, 0.0, 1.0)


def histogram(gray: Array, bins: int = 256) -> Array:
    idx = np.minimum(np.floor(gray.reshape(-1) * bins), bins - 1)
    idx = np.maximum(idx, 0).astype(np.int64)
    return np.bincount(idx, minlength=bins)


def shannon_entropy(gray: Array, bins: int = 256) -> float:
    """Entropy in bits of the ``bins``-bin intensity histogram."""
    if gray.size == 0:
        raise ArgumentError('entropy of an empty image is undefined')
    counts = histogram(gray, bins)
    p = counts[counts > 0] / gray.size
    return float(-np.sum(p * np.log2(p)) + 0.0)


@functools.lru_cache(maxsize=None)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> Array:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    window = np.outer(g, g)
    window.setflags(write=False)
    return window


def _filter_valid(img: Array, window: Array) -> Array:
    # the window is symmetric, so convolution equals correlation
    return convolve2d(img, window, mode='valid')


def local_moments(a: Array, b: Array) -> tuple[Array, Array, Array, Array, Array]:
    window = gaussian_window()
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a * mu_a
    var_b = _filter_valid(b * b, window) - mu_b * mu_b
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    return mu_a, mu_b, var_a, var_b, cov


def ssim(a: Array, b: Array) -> float:
    """Mean SSIM over every valid 11x11 Gaussian window position."""
    if a.shape != b.shape:
        raise ArgumentError(f'ssim needs equal shapes, got {a.shape} and {b.shape}')
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ArgumentError(
            f'ssim needs 2-d images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, '
            f'got {a.shape}',
        )
    mu_a, mu_b, var_a, var_b, cov = local_moments(a, b)
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def mean_local_variance(gray: Array) -> float:
    """Mean variance under the SSIM window; used as a sharpness cue."""
    if min(gray.shape) < SSIM_WINDOW:
        raise ArgumentError(f'image smaller than the SSIM window: {gray.shape}')
    window = gaussian_window()
    mu = _filter_valid(gray, window)
    return float(np.mean(np.maximum(_filter_valid(gray * gray, window) - mu * mu, 0.0)))
