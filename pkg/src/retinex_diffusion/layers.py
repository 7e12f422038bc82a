"""Building blocks shared by the networks. Tensors are B x C x H x W."""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError


def group_norm(channels, groups=8):
    g = min(groups, channels)
    while channels % g:
        g -= 1
    return nn.GroupNorm(g, channels)


def noise_level_embedding(gamma, dim, scale=1000.0):
    """Sinusoidal features of the cumulative noise level ``gamma`` (shape B)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=gamma.dtype,
                                                         device=gamma.device) / half)
    args = scale * gamma[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


def positional_encoding_2d(channels, h, w, dtype=torch.float32, device=None):
    """Fixed sinusoidal encoding of normalized (row, col) coordinates, C x H x W."""
    quarter = max(channels // 4, 1)
    freqs = 2.0 ** torch.arange(quarter, dtype=torch.float64) * math.pi
    ys = (torch.arange(h, dtype=torch.float64) + 0.5) / h
    xs = (torch.arange(w, dtype=torch.float64) + 0.5) / w
    py = ys[:, None] * freqs[None]
    px = xs[:, None] * freqs[None]
    enc = torch.cat([
        torch.sin(py)[:, None, :].expand(h, w, quarter),
        torch.cos(py)[:, None, :].expand(h, w, quarter),
        torch.sin(px)[None, :, :].expand(h, w, quarter),
        torch.cos(px)[None, :, :].expand(h, w, quarter),
    ], dim=-1)
    enc = enc[..., :channels]
    if enc.shape[-1] < channels:
        enc = F.pad(enc, (0, channels - enc.shape[-1]))
    return enc.permute(2, 0, 1).to(dtype=dtype, device=device)


class ConvBlock(nn.Module):
    """Two 3x3 convs with LeakyReLU, optionally shifted by a time embedding."""

    def __init__(self, in_ch, out_ch, temb_dim=None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.temb = nn.Linear(temb_dim, out_ch) if temb_dim else None

    def forward(self, x, temb=None):
        h = self.act(self.conv1(x))
        if self.temb is not None:
            h = h + self.temb(temb)[:, :, None, None]
        return self.act(self.conv2(h))


class ResBlock(nn.Module):
    def __init__(self, in_ch, out_ch, temb_dim):
        super().__init__()
        self.norm1 = group_norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb = nn.Linear(temb_dim, out_ch)
        self.norm2 = group_norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class KVAttention(nn.Module):
    """Dot-product attention with queries from one map, keys/values from another.

    Both maps get a fixed 2-D positional encoding before projection, so the
    result depends on where each key sits. Returns the projected attention
    output only; callers add the residual.
    """

    def __init__(self, q_ch, kv_ch, dim, heads=1, zero_init=True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"attention dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = nn.Conv2d(q_ch, dim, 1)
        self.k = nn.Conv2d(kv_ch, dim, 1)
        self.v = nn.Conv2d(kv_ch, dim, 1)
        self.out = nn.Conv2d(dim, q_ch, 1)
        if zero_init:
            zero_module(self.out)

    def split(self, x):
        B, C, H, W = x.shape
        return x.reshape(B, self.heads, C // self.heads, H * W).transpose(-1, -2).contiguous()

    def attend(self, q, k, v, shape):
        B, _, H, W = shape
        o = F.scaled_dot_product_attention(self.split(q), self.split(k), self.split(v))
        o = o.transpose(-1, -2).reshape(B, -1, H, W)
        return self.out(o)

    def forward(self, x, kv):
        if x.shape[0] != kv.shape[0]:
            raise ShapeError(f"batch sizes {x.shape[0]} and {kv.shape[0]} differ")
        pq = positional_encoding_2d(x.shape[1], *x.shape[-2:], x.dtype, x.device)
        pk = positional_encoding_2d(kv.shape[1], *kv.shape[-2:], kv.dtype, kv.device)
        return self.attend(self.q(x + pq), self.k(kv + pk), self.v(kv), x.shape)


def zero_module(m):
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


def resize_to(x, size):
    """Area-downsample or bilinear-upsample ``x`` to spatial ``size``."""
    size = tuple(size)
    if tuple(x.shape[-2:]) == size:
        return x
    if x.shape[-2] >= size[0] and x.shape[-1] >= size[1]:
        return F.adaptive_avg_pool2d(x, size)
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)
