"""Synthetic paired low/normal-light images for smoke runs and demos."""
from pathlib import Path

import numpy as np

from .data import save_image


def normal_light_image(rng, size=64):
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    base = rng.uniform(0.3, 0.6, 3)
    img += base + 0.2 * (xx[..., None] - 0.5) * rng.uniform(-1, 1, 3)
    for _ in range(4):
        cy, cx = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.08, 0.25)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += blob[..., None] * rng.uniform(-0.35, 0.35, 3)
    return np.clip(img, 0.02, 0.98)


def darken(img, rng, gain=0.15, gamma=1.3, noise=0.01):
    low = gain * img ** gamma + rng.normal(0.0, noise, img.shape)
    return np.clip(low, 0.0, 1.0)


def make_toy_pairs(root, n=4, size=64, seed=0):
    """Write ``n`` pairs under ``root/low`` and ``root/high``; returns ``root``."""
    rng = np.random.default_rng(seed)
    root = Path(root)
    for i in range(n):
        high = normal_light_image(rng, size)
        save_image(root / "high" / f"{i:03d}.png", high)
        save_image(root / "low" / f"{i:03d}.png", darken(high, rng))
    return root
