"""Objective quality measures: peak-1.0 PSNR and single-scale SSIM."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityScore:
    psnr_db: float
    ssim: float


def psnr_from_mse(mse):
    """Peak-1.0 PSNR in dB; zero (or tiny) MSE caps at 99 dB."""
    if mse <= 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _check_pair(a, b):
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError(
            f"image dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")


def psnr(a, b):
    """PSNR between two equal-size images, peak value 1.0."""
    _check_pair(a, b)
    diff = a.data - b.data
    mse = float(np.mean(diff * diff))
    return psnr_from_mse(mse)


def _gaussian_window():
    offs = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    g = np.exp(-(offs ** 2) / (2.0 * SSIM_SIGMA ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b):
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5),
    K1=0.01, K2=0.03, dynamic range 1.0, valid-region windows only."""
    _check_pair(a, b)
    if min(a.width, a.height) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on a side")
    x = a.data
    y = b.data
    win = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    var_x = convolve2d(x * x, win, mode="valid") - mu_x * mu_x
    var_y = convolve2d(y * y, win, mode="valid") - mu_y * mu_y
    cov = convolve2d(x * y, win, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def quality(a, b):
    return QualityScore(psnr_db=psnr(a, b), ssim=ssim(a, b))
