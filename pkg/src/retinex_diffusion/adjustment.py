"""Adjustment network and its losses.

ANet maps a decomposition (R_t, L_t) and the noise level of step t to the
adjusted pair (R', L') plus its decoder features at strides 4, 2 and 1.
"""
from dataclasses import dataclass
from typing import List, NamedTuple

import torch
import torch.nn as nn

from .decomposition import UNetBody
from .errors import ShapeError
from .layers import noise_level_embedding
from .metrics import ssim_torch

FEATURE_STRIDES = (4, 2, 1)


@dataclass
class ANetConfig:
    base_channels: int = 16
    depth: int = 3
    temb_dim: int = 64

    def __post_init__(self):
        if self.depth < 3:
            raise ValueError(f"ANet depth must be >= 3 to expose stride-4 features, got {self.depth}")

    @property
    def feature_channels(self):
        return tuple(self.base_channels * s for s in FEATURE_STRIDES)


class RetinexCondition(NamedTuple):
    R: torch.Tensor
    L: torch.Tensor
    F: List[torch.Tensor]

    def detach(self):
        return RetinexCondition(self.R.detach(), self.L.detach(), [f.detach() for f in self.F])


class ANet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or ANetConfig()
        c = self.config
        self.time_mlp = nn.Sequential(
            nn.Linear(c.temb_dim, c.temb_dim), nn.SiLU(), nn.Linear(c.temb_dim, c.temb_dim))
        self.body = UNetBody(4, c.base_channels, c.depth, temb_dim=c.temb_dim)
        self.head_R = nn.Conv2d(c.base_channels, 3, 3, padding=1)
        self.head_L = nn.Conv2d(c.base_channels, 1, 3, padding=1)

    def forward(self, dec, gamma):
        return adjust(dec, gamma, self)


def adjust(dec, gamma, anet):
    """``gamma`` is the per-sample cumulative noise level, shape B."""
    R, L = dec
    if R.shape[-2:] != L.shape[-2:] or R.shape[1] != 3 or L.shape[1] != 1:
        raise ShapeError(f"bad decomposition shapes R={tuple(R.shape)} L={tuple(L.shape)}")
    gamma = torch.as_tensor(gamma, dtype=R.dtype, device=R.device).reshape(-1).expand(R.shape[0])
    temb = anet.time_mlp(noise_level_embedding(gamma, anet.config.temb_dim))
    feats = anet.body(torch.cat([R, L], dim=1), temb)
    h = feats[-1]
    return RetinexCondition(torch.sigmoid(anet.head_R(h)), torch.sigmoid(anet.head_L(h)),
                            list(feats[-3:]))


def zero_condition_features(anet_config, batch, h, w, dtype=torch.float32, device=None):
    return [torch.zeros(batch, c, h // s, w // s, dtype=dtype, device=device)
            for c, s in zip(anet_config.feature_channels, FEATURE_STRIDES)]


def loss_ja(R_prime, R_gt):
    """L1 plus SSIM dissimilarity between adjusted and target reflectance."""
    return (R_prime - R_gt).abs().mean() + (1.0 - ssim_torch(R_prime, R_gt))


def soft_histogram(x, bins=64):
    """Differentiable per-image histogram over [0, 1], each row sums to 1.

    Bin centers sit at k / (bins - 1) and every value splits its unit mass
    linearly between the two nearest centers.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    flat = x.reshape(x.shape[0], -1).clamp(0.0, 1.0)
    centers = torch.linspace(0.0, 1.0, bins, dtype=x.dtype, device=x.device)
    width = 1.0 / (bins - 1)
    w = (1.0 - (flat[:, :, None] - centers[None, None, :]).abs() / width).clamp(min=0.0)
    return w.sum(dim=1) / flat.shape[1]


def loss_je(L_prime, L_gt, bins=64):
    """L1 plus histogram L1 between adjusted and target illumination."""
    hist = (soft_histogram(L_prime, bins) - soft_histogram(L_gt, bins)).abs().sum(dim=1).mean()
    return (L_prime - L_gt).abs().mean() + hist


def loss_anet(cond, targets, lambda_ja=1.0, lambda_je=1.0, bins=64):
    R_gt, L_gt = targets
    return lambda_ja * loss_ja(cond.R, R_gt) + lambda_je * loss_je(cond.L, L_gt, bins)
