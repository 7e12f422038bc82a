"""Classical Retinex operations on H x W x C float arrays in [0, 1]."""
import math

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError

LOG_FLOOR = 1e-4
MSR_SIGMAS = (15.0, 80.0, 250.0)
# side length the classical MSR scales were tuned for
MSR_REFERENCE_SIDE = 600


def reconstruct(R, L):
    R, L = np.asarray(R), np.asarray(L)
    if R.ndim != 3 or L.ndim != 3 or L.shape[-1] != 1:
        raise ShapeError(f"expected R as HxWx3 and L as HxWx1, got {R.shape}, {L.shape}")
    if R.shape[:2] != L.shape[:2]:
        raise ShapeError(f"R is {R.shape[:2]} but L is {L.shape[:2]}")
    return R * L


def gaussian_kernel1d(sigma):
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_kernel2d(sigma):
    k = gaussian_kernel1d(sigma)
    return np.outer(k, k)


def luminance(I):
    I = np.asarray(I, dtype=np.float64)
    if I.ndim == 2:
        return I[..., None]
    return I.mean(axis=-1, keepdims=True)


def gaussian_surround(I, sigma):
    """Channel-mean luminance blurred by a normalized Gaussian, H x W x 1."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    lum = luminance(I)[..., 0]
    k = gaussian_kernel1d(sigma)
    out = ndimage.correlate1d(lum, k, axis=0, mode="mirror")
    out = ndimage.correlate1d(out, k, axis=1, mode="mirror")
    return out[..., None]


def default_sigmas(shape):
    scale = max(shape[0], shape[1]) / MSR_REFERENCE_SIDE
    return [s * scale for s in MSR_SIGMAS]


def msr_reflectance(I, sigmas=None):
    """Mean over scales of ``log I - log G_sigma(I)``; unbounded values."""
    I = np.asarray(I, dtype=np.float64)
    if sigmas is None:
        sigmas = default_sigmas(I.shape)
    sigmas = list(sigmas)
    if not sigmas:
        raise ParameterError("sigmas must be non-empty")
    logI = np.log(np.maximum(I, LOG_FLOOR))
    out = np.zeros_like(I)
    for s in sigmas:
        out += logI - np.log(np.maximum(gaussian_surround(I, s), LOG_FLOOR))
    return out / len(sigmas)


def linear_stretch(Rhat, low_pct=1.0, high_pct=99.0):
    """Per-channel percentile stretch of ``exp(Rhat)`` into [0, 1].

    A channel whose percentiles coincide maps to 0.5.
    """
    v = np.exp(np.asarray(Rhat, dtype=np.float64))
    if v.ndim == 2:
        v = v[..., None]
    out = np.empty_like(v)
    for c in range(v.shape[-1]):
        ch = v[..., c]
        p1, p99 = np.percentile(ch, [low_pct, high_pct])
        if p99 <= p1:
            out[..., c] = 0.5
        else:
            out[..., c] = (ch - p1) / (p99 - p1)
    return np.clip(out, 0.0, 1.0)
