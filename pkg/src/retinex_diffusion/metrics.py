"""Image quality metrics.

``ssim_torch`` is differentiable and shared with the adjustment loss;
``ssim`` and ``psnr`` take H x W x C arrays for evaluation.
"""
import math

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ParameterError, ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shapes {tuple(a.shape)} and {tuple(b.shape)} differ")


def psnr(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * math.log10(1.0 / mse)))


def ssim_window(dtype=torch.float64, size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-0.5 * (x / sigma) ** 2)
    g = g / g.sum()
    return (g[:, None] * g[None, :]).to(dtype)


def ssim_torch(a, b, reduction="mean"):
    """SSIM of B x C x H x W tensors over the valid window positions.

    With ``reduction="none"`` returns one value per image.
    """
    _check_pair(a, b)
    if a.dim() != 4:
        raise ShapeError(f"expected BxCxHxW tensors, got {tuple(a.shape)}")
    H, W = a.shape[-2:]
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ParameterError(f"images of {H}x{W} are smaller than the {SSIM_WINDOW}px window")
    C = a.shape[1]
    w = ssim_window(a.dtype).to(a.device).expand(C, 1, SSIM_WINDOW, SSIM_WINDOW)

    def filt(x):
        return F.conv2d(x, w, groups=C)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    per_image = (num / den).mean(dim=(1, 2, 3))
    if reduction == "none":
        return per_image
    return per_image.mean()


def ssim(a, b):
    """Mean SSIM of two H x W (x C) images with values in [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    ta = torch.from_numpy(a).permute(2, 0, 1)[None]
    tb = torch.from_numpy(b).permute(2, 0, 1)[None]
    return float(ssim_torch(ta, tb))


def hist_l1(a, b, bins=64):
    """L1 distance between sum-normalized hard histograms over [0, 1]."""
    if bins < 2:
        raise ParameterError(f"bins must be >= 2, got {bins}")
    ha, hb = hard_histogram(a, bins), hard_histogram(b, bins)
    na, nb = int(ha.sum()), int(hb.sum())
    # integer numerator keeps the result independent of summation order
    return int(np.abs(ha * nb - hb * na).sum()) / (na * nb)


def hard_histogram(x, bins=64):
    """Integer counts over ``bins`` equal-width bins of [0, 1]; the last bin is closed."""
    h, _ = np.histogram(np.clip(np.asarray(x, dtype=np.float64), 0, 1), bins=bins, range=(0.0, 1.0))
    return h.astype(np.int64)
