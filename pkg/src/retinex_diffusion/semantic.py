"""Frozen multi-scale feature extractor used as the semantic prior.

Any module with a ``spec`` attribute and a forward returning three maps at
strides 16, 8 and 4 can stand in for the default encoder.
"""
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import torch
import torch.nn as nn

from .errors import ShapeError

PRIOR_STRIDES = (16, 8, 4)


@dataclass(frozen=True)
class BackboneSpec:
    name: str = "conv3stage"
    channel_counts: Tuple[int, int, int] = (64, 32, 16)
    frozen: bool = True

    def __post_init__(self):
        if not self.frozen:
            raise ValueError("the semantic backbone is always frozen")
        if len(self.channel_counts) != 3:
            raise ValueError("exactly three channel counts are required")


class SemanticPrior(NamedTuple):
    s16: torch.Tensor
    s8: torch.Tensor
    s4: torch.Tensor

    def by_stride(self, stride):
        return {16: self.s16, 8: self.s8, 4: self.s4}[stride]


class ConvEncoderBackbone(nn.Module):
    """Small strided conv encoder; stage outputs at strides 4, 8, 16."""

    def __init__(self, spec=None, seed=0):
        super().__init__()
        self.spec = spec or BackboneSpec()
        c0, c1, c2 = self.spec.channel_counts
        self.stem = nn.Sequential(
            nn.Conv2d(3, c2, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(c2, c2, 3, stride=2, padding=1), nn.ReLU())
        self.stage8 = nn.Sequential(nn.Conv2d(c2, c1, 3, stride=2, padding=1), nn.ReLU())
        self.stage16 = nn.Sequential(nn.Conv2d(c1, c0, 3, stride=2, padding=1), nn.ReLU())
        gen = torch.Generator().manual_seed(seed)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_uniform_(m.weight, nonlinearity="relu", generator=gen)
                nn.init.uniform_(m.bias, -0.05, 0.05, generator=gen)
        self.requires_grad_(False)
        self.eval()

    def train(self, mode=True):
        return super().train(False)

    def forward(self, y):
        f4 = self.stem(y)
        f8 = self.stage8(f4)
        f16 = self.stage16(f8)
        return f16, f8, f4


def extract(y, backbone):
    """Semantic features of the low-light input ``y`` (B x 3 x H x W)."""
    H, W = y.shape[-2:]
    if H % 16 or W % 16:
        ph, pw = (-H) % 16, (-W) % 16
        raise ShapeError(
            f"input {H}x{W} is not divisible by 16; pad by ({ph}, {pw}) rows/cols")
    with torch.no_grad():
        f16, f8, f4 = backbone(y)
    return SemanticPrior(f16, f8, f4)
