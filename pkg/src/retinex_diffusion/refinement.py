"""Refinement network: feature- and image-level Retinex-conditioned modules.

FRCM modulates features of the x0 estimate with scale/shift maps predicted
from ANet's multi-scale features. IRCM applies a chain of conditional
affine transforms driven by the adjusted illumination and reflectance and
adds a projection of the modulated features as a residual.
"""
from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError
from .layers import resize_to, zero_module

X0_INPUT_RANGE = (-1.0, 2.0)


@dataclass
class RNetConfig:
    channels: int = 16
    hidden: int = 16
    condition_channels: tuple = (64, 32, 16)


class RefinedEstimate(NamedTuple):
    x0: torch.Tensor


class ConditionalAffine(nn.Module):
    """``T(a | b) = gamma(b) * conv(a) + beta(b)`` with ``gamma = 1 + head``.

    ``zero_head`` makes the transform start as ``conv(a)``; same-width convs
    start as the identity.
    """

    def __init__(self, in_a, in_b, out, hidden=16, zero_head=False):
        super().__init__()
        self.conv = nn.Conv2d(in_a, out, 3, padding=1)
        if in_a == out:
            nn.init.dirac_(self.conv.weight)
            nn.init.zeros_(self.conv.bias)
        self.head = nn.Sequential(
            nn.Conv2d(in_b, hidden, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, 2 * out, 3, padding=1))
        if zero_head:
            zero_module(self.head[-1])

    def params(self, b):
        g, beta = self.head(b).chunk(2, dim=1)
        return 1.0 + g, beta

    def forward(self, a, b):
        if a.shape[-2:] != b.shape[-2:]:
            raise ShapeError(f"affine input {tuple(a.shape[-2:])} and condition {tuple(b.shape[-2:])} differ")
        gamma, beta = self.params(b)
        return gamma * self.conv(a) + beta


class FRCM(nn.Module):
    def __init__(self, channels, condition_channels, hidden=16):
        super().__init__()
        self.proj = nn.Conv2d(channels, channels, 3, padding=1)
        self.head = nn.Sequential(
            nn.Conv2d(sum(condition_channels), hidden, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(hidden, 2 * channels, 3, padding=1))

    def params(self, F_t, size):
        unified = torch.cat([resize_to(f, size) for f in F_t], dim=1)
        g, beta = self.head(unified).chunk(2, dim=1)
        return 1.0 + g, beta

    def forward(self, F_x0, F_t):
        gamma, beta = self.params(F_t, F_x0.shape[-2:])
        return frcm(F_x0, gamma, beta, self.proj)


def frcm(F_x0, gamma, beta, proj):
    """``gamma * W(F_x0) + beta``."""
    h = proj(F_x0)
    if gamma.shape != h.shape or beta.shape != h.shape:
        raise ShapeError(f"affine params {tuple(gamma.shape)} do not match features {tuple(h.shape)}")
    return gamma * h + beta


class IRCM(nn.Module):
    def __init__(self, channels, hidden=16):
        super().__init__()
        self.t_L = ConditionalAffine(1, 3, 3, hidden)
        self.t_R = ConditionalAffine(3, 3, 3, hidden)
        self.t_x = ConditionalAffine(3, 3, 3, hidden, zero_head=True)
        self.W = zero_module(nn.Conv2d(channels, 3, 3, padding=1))

    def delta(self, x0, R, L):
        return self.t_R(R, self.t_L(L, x0))

    def forward(self, x0_hat, R, L, F_refined):
        return ircm(x0_hat, R, L, F_refined, self)


def ircm(x0_hat, R, L, F_refined, module):
    x0 = x0_hat.clamp(*X0_INPUT_RANGE)
    if R.shape[-2:] != x0.shape[-2:] or L.shape[-2:] != x0.shape[-2:]:
        raise ShapeError("reflectance/illumination must match the estimate's spatial size")
    d = module.delta(x0, R, L)
    out = module.t_x(x0, d)
    if F_refined is not None:
        out = out + module.W(F_refined)
    return RefinedEstimate(out.clamp(0.0, 1.0))


class RNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = c = config or RNetConfig()
        self.encode = nn.Sequential(
            nn.Conv2d(3, c.channels, 3, padding=1), nn.LeakyReLU(0.2),
            nn.Conv2d(c.channels, c.channels, 3, padding=1))
        self.frcm = FRCM(c.channels, c.condition_channels, c.hidden)
        self.ircm = IRCM(c.channels, c.hidden)

    def forward(self, x0_hat, cond, use_frcm=True, use_ircm=True):
        return refine(x0_hat, cond, self, use_frcm, use_ircm)


def refine(x0_hat, cond, rnet, use_frcm=True, use_ircm=True):
    """Refined x0 estimate in [0, 1].

    Disabling a module bypasses it with the identity; disabling both skips
    the network and only clamps.
    """
    if not (use_frcm or use_ircm):
        return RefinedEstimate(x0_hat.clamp(0.0, 1.0))
    x0 = x0_hat.clamp(*X0_INPUT_RANGE)
    feats = rnet.encode(x0)
    if use_frcm:
        feats = rnet.frcm(feats, cond.F)
    if use_ircm:
        return ircm(x0, cond.R, cond.L, feats, rnet.ircm)
    return RefinedEstimate((x0 + rnet.ircm.W(feats)).clamp(0.0, 1.0))


def loss_rnet(refined, x0):
    pred = refined.x0 if isinstance(refined, RefinedEstimate) else refined
    if pred.shape != x0.shape:
        raise ShapeError(f"shapes {tuple(pred.shape)} and {tuple(x0.shape)} differ")
    return F.mse_loss(pred, x0)
