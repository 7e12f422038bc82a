"""Noise-prediction UNet with Retinex and semantic attention.

Retinex attention sits in encoder stages and lets features query embeddings
of the adjusted reflectance (at the stage resolution) and illumination (at
half of it). Semantic attention sits in decoder stages and mixes a
self-attention branch with a cross-attention branch over the semantic prior
through two learnable weights.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import NumericalError, ShapeError
from .layers import (KVAttention, ResBlock, group_norm, noise_level_embedding,
                     positional_encoding_2d, resize_to, zero_module)
from .semantic import PRIOR_STRIDES


@dataclass
class UNetConfig:
    base_channels: int = 16
    channel_mults: Tuple[int, ...] = (1, 2, 2, 4, 4)
    temb_dim: int = 64
    heads: int = 1
    retinex_attn_strides: Tuple[int, ...] = (1, 2)
    semantic_attn_strides: Tuple[int, ...] = (16, 8, 4)
    semantic_channels: Tuple[int, int, int] = (64, 32, 16)
    zero_init_attn: bool = True
    zero_init_ca: bool = False

    def __post_init__(self):
        self.channel_mults = tuple(self.channel_mults)
        self.retinex_attn_strides = tuple(self.retinex_attn_strides)
        self.semantic_attn_strides = tuple(self.semantic_attn_strides)
        self.semantic_channels = tuple(self.semantic_channels)
        strides = self.strides
        for s in self.retinex_attn_strides:
            if s not in strides:
                raise ValueError(f"retinex attention stride {s} not among UNet strides {strides}")
        for s in self.semantic_attn_strides:
            if s not in PRIOR_STRIDES or s not in strides:
                raise ValueError(f"semantic attention stride {s} must match a prior stride {PRIOR_STRIDES}")

    @property
    def strides(self):
        return tuple(2 ** i for i in range(len(self.channel_mults)))

    @property
    def channels(self):
        return tuple(self.base_channels * m for m in self.channel_mults)


class RetinexAttention(nn.Module):
    def __init__(self, channels, heads=1, zero_init=True):
        super().__init__()
        self.norm_r = group_norm(channels)
        self.norm_l = group_norm(channels)
        self.embed_R = nn.Conv2d(3, channels, 3, padding=1)
        self.embed_L = nn.Conv2d(1, channels, 3, padding=1)
        self.attn_R = KVAttention(channels, channels, channels, heads, zero_init)
        self.attn_L = KVAttention(channels, channels, channels, heads, zero_init)

    def embed(self, size, R, L):
        h, w = size
        R_em = self.embed_R(resize_to(R, (h, w)))
        L_em = self.embed_L(resize_to(L, (max(h // 2, 1), max(w // 2, 1))))
        return R_em, L_em

    def forward(self, x, R, L):
        R_em, L_em = self.embed(x.shape[-2:], R, L)
        x = retinex_attention(x, R_em, self.attn_R, self.norm_r)
        return retinex_attention(x, L_em, self.attn_L, self.norm_l)


def retinex_attention(F_i, P_em, attn, norm=None):
    """``F_i + SA(P_em, F_i)``: queries from the features, keys/values from ``P_em``."""
    q = norm(F_i) if norm is not None else F_i
    return F_i + attn(q, P_em)


class SemanticAttention(nn.Module):
    def __init__(self, channels, sem_channels, heads=1, zero_init_ca=False):
        super().__init__()
        d = channels
        self.heads = heads
        self.norm = group_norm(channels)
        self.sa_q = nn.Conv2d(channels, d, 1)
        self.sa_k = nn.Conv2d(channels, d, 1)
        self.sa_v = nn.Conv2d(channels, d, 1)
        self.sa_s = nn.Conv2d(sem_channels, d, 1)
        self.sa_out = nn.Conv2d(d, channels, 1)
        self.ca = KVAttention(channels, sem_channels, d, heads, zero_init=False)
        zero_module(self.sa_out)
        if zero_init_ca:
            zero_module(self.ca.out)
        self.lambda_sa = nn.Parameter(torch.tensor(1.0))
        self.lambda_ca = nn.Parameter(torch.tensor(0.0))

    def branches(self, F_i, F_s):
        if F_i.shape[-2:] != F_s.shape[-2:]:
            raise ShapeError(
                f"semantic feature {tuple(F_s.shape[-2:])} does not match stage {tuple(F_i.shape[-2:])}")
        h = self.norm(F_i)
        pe = positional_encoding_2d(h.shape[1], *h.shape[-2:], h.dtype, h.device)
        q, k = self.sa_q(h + pe), self.sa_k(h + pe)
        v = self.sa_v(h) + self.sa_s(F_s)
        split = self.ca.split
        B, _, H, W = h.shape
        o = F.scaled_dot_product_attention(split(q), split(k), split(v))
        sa = self.sa_out(o.transpose(-1, -2).reshape(B, -1, H, W))
        ca = self.ca(h, F_s)
        return sa, ca

    def forward(self, F_i, F_s):
        sa, ca = self.branches(F_i, F_s)
        return F_i + self.lambda_sa * sa + self.lambda_ca * ca


def semantic_attention(F_i, F_s, layer):
    return layer(F_i, F_s)


class ConditionalUNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = c = config or UNetConfig()
        chs = c.channels
        self.time_mlp = nn.Sequential(
            nn.Linear(c.temb_dim, 4 * c.temb_dim), nn.SiLU(), nn.Linear(4 * c.temb_dim, c.temb_dim))
        self.in_conv = nn.Conv2d(6, chs[0], 3, padding=1)
        self.enc = nn.ModuleList()
        self.retinex = nn.ModuleDict()
        self.down = nn.ModuleList()
        prev = chs[0]
        for i, ch in enumerate(chs):
            self.enc.append(ResBlock(prev, ch, c.temb_dim))
            if c.strides[i] in c.retinex_attn_strides:
                self.retinex[str(c.strides[i])] = RetinexAttention(ch, c.heads, c.zero_init_attn)
            if i < len(chs) - 1:
                self.down.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        self.mid = ResBlock(prev, prev, c.temb_dim)
        sem_ch = dict(zip(PRIOR_STRIDES, c.semantic_channels))
        self.dec = nn.ModuleList()
        self.semantic = nn.ModuleDict()
        self.up = nn.ModuleList()
        for i in reversed(range(len(chs))):
            ch = chs[i]
            self.dec.append(ResBlock(prev + ch, ch, c.temb_dim))
            s = c.strides[i]
            if s in c.semantic_attn_strides:
                self.semantic[str(s)] = SemanticAttention(ch, sem_ch[s], c.heads, c.zero_init_ca)
            if i > 0:
                self.up.append(nn.Conv2d(ch, chs[i - 1], 3, padding=1))
                prev = chs[i - 1]
            else:
                prev = ch
        self.out_norm = group_norm(chs[0])
        self.out_conv = nn.Conv2d(chs[0], 3, 3, padding=1)

    def forward(self, x_t, y, gamma, cond=None, seg=None):
        """Predicted noise. ``cond``/``seg`` of None skip the matching attention."""
        c = self.config
        m = c.strides[-1]
        if x_t.shape[-2] % m or x_t.shape[-1] % m:
            raise ShapeError(f"spatial size {tuple(x_t.shape[-2:])} must be divisible by {m}")
        if x_t.shape != y.shape:
            raise ShapeError(f"x_t {tuple(x_t.shape)} and y {tuple(y.shape)} differ")
        gamma = torch.as_tensor(gamma, dtype=x_t.dtype, device=x_t.device).reshape(-1).expand(x_t.shape[0])
        temb = self.time_mlp(noise_level_embedding(gamma, c.temb_dim))
        h = self.in_conv(torch.cat([x_t, y], dim=1))
        skips = []
        for i, enc in enumerate(self.enc):
            h = enc(h, temb)
            key = str(c.strides[i])
            if cond is not None and key in self.retinex:
                h = self.retinex[key](h, cond.R, cond.L)
            skips.append(h)
            if i < len(self.down):
                h = self.down[i](h)
        h = self.mid(h, temb)
        n = len(self.enc)
        for j, dec in enumerate(self.dec):
            i = n - 1 - j
            h = dec(torch.cat([h, skips[i]], dim=1), temb)
            key = str(c.strides[i])
            if seg is not None and key in self.semantic:
                h = self.semantic[key](h, seg.by_stride(c.strides[i]))
            if i > 0:
                h = self.up[j](F.interpolate(h, scale_factor=2, mode="nearest"))
        return self.out_conv(F.silu(self.out_norm(h)))


def predict_noise(x_t, y, cond, seg, t, unet, sched):
    gamma = sched.gamma(np.asarray(t.cpu() if isinstance(t, torch.Tensor) else t))
    eps = unet(x_t, y, torch.as_tensor(gamma), cond, seg)
    if not torch.isfinite(eps).all():
        raise NumericalError("unet", t)
    return eps


def unet_loss(eps, eps_hat):
    return F.mse_loss(eps_hat, eps)
