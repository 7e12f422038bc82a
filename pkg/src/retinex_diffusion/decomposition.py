"""Decomposition network: (low-light input, current sample) -> (R, L)."""
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError
from .layers import ConvBlock

W_REC = 1.0
W_CR = 0.01
W_SM = 0.1
CROSS_REC_WEIGHT = 0.001


@dataclass
class DNetConfig:
    base_channels: int = 16
    depth: int = 3

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 4:
            raise ValueError(f"base_channels must be >= 4, got {self.base_channels}")


class Decomposition(NamedTuple):
    R: torch.Tensor  # B x 3 x H x W
    L: torch.Tensor  # B x 1 x H x W


class UNetBody(nn.Module):
    """Plain conv encoder/decoder with skips; returns decoder features per level.

    ``temb_dim`` enables a time-embedding shift inside every encoder stage.
    """

    def __init__(self, in_ch, base, depth, temb_dim=None):
        super().__init__()
        self.depth = depth
        chs = [base * 2 ** i for i in range(depth)]
        self.chs = chs
        self.stem = nn.Conv2d(in_ch, base, 3, padding=1)
        self.enc = nn.ModuleList()
        self.down = nn.ModuleList()
        prev = base
        for c in chs:
            self.enc.append(ConvBlock(prev, c, temb_dim))
            self.down.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
            prev = c
        self.mid = ConvBlock(chs[-1], chs[-1], temb_dim)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        for c in reversed(chs):
            self.up.append(nn.Conv2d(prev, c, 3, padding=1))
            self.dec.append(ConvBlock(2 * c, c))
            prev = c

    def forward(self, x, temb=None):
        m = 2 ** self.depth
        if x.shape[-2] % m or x.shape[-1] % m:
            raise ShapeError(f"spatial size {tuple(x.shape[-2:])} must be divisible by {m}")
        h = self.stem(x)
        skips = []
        for enc, down in zip(self.enc, self.down):
            h = enc(h, temb)
            skips.append(h)
            h = down(h)
        h = self.mid(h, temb)
        feats = []
        for up, dec, skip in zip(self.up, self.dec, reversed(skips)):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = dec(torch.cat([h, skip], dim=1))
            feats.append(h)
        return feats


class DNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or DNetConfig()
        c = self.config
        self.body = UNetBody(6, c.base_channels, c.depth)
        self.head_R = nn.Conv2d(c.base_channels, 3, 3, padding=1)
        self.head_L = nn.Conv2d(c.base_channels, 1, 3, padding=1)

    def forward(self, y, x_t):
        return decompose(y, x_t, self)


def decompose(y, x_t, dnet):
    if y.shape != x_t.shape:
        raise ShapeError(f"y {tuple(y.shape)} and x_t {tuple(x_t.shape)} differ")
    h = dnet.body(torch.cat([y, x_t.clamp(0.0, 1.0)], dim=1))[-1]
    return Decomposition(torch.sigmoid(dnet.head_R(h)), torch.sigmoid(dnet.head_L(h)))


def image_gradients(x):
    """Forward differences along x and y, zero-padded to the input size."""
    dx = F.pad(x[..., :, 1:] - x[..., :, :-1], (0, 1, 0, 0))
    dy = F.pad(x[..., 1:, :] - x[..., :-1, :], (0, 0, 0, 1))
    return dx, dy


def smoothness(L, R):
    """Total variation of ``L`` down-weighted where ``R`` has edges."""
    gray = R.mean(dim=1, keepdim=True)
    lx, ly = image_gradients(L)
    rx, ry = image_gradients(gray)
    return (lx.abs() * torch.exp(-10.0 * rx.abs()) + ly.abs() * torch.exp(-10.0 * ry.abs())).mean()


def dnet_pretrain_loss(low, high, dec_low, dec_high):
    """Reconstruction + constant-reflectance + smooth-illumination objective.

    Returns ``(total, parts)`` where ``parts`` holds the unweighted terms.
    """
    R_lo, L_lo = dec_low
    R_hi, L_hi = dec_high
    rec = (
        (R_lo * L_lo - low).abs().mean()
        + (R_hi * L_hi - high).abs().mean()
        + CROSS_REC_WEIGHT * (R_hi * L_lo - low).abs().mean()
        + CROSS_REC_WEIGHT * (R_lo * L_hi - high).abs().mean()
    )
    cr = (R_lo - R_hi).abs().mean()
    sm = smoothness(L_lo, R_lo) + smoothness(L_hi, R_hi)
    total = W_REC * rec + W_CR * cr + W_SM * sm
    return total, {"rec": rec, "cr": cr, "sm": sm}
