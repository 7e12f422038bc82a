"""Reverse process: per step decompose, adjust, denoise, refine, DDIM-update."""
from dataclasses import dataclass

import torch

from .adjustment import RetinexCondition, adjust, zero_condition_features
from .decomposition import decompose
from .denoiser import predict_noise
from .diffusion import approx_x0, ddim_step, ddim_timesteps
from .errors import NumericalError, ParameterError, ShapeError
from .refinement import refine
from .semantic import extract


@dataclass
class SamplerConfig:
    steps: int = 8
    seed: int = 0
    use_retinex_cond: bool = True
    use_semantic_cond: bool = True
    use_frcm: bool = True
    use_ircm: bool = True
    use_anet: bool = True

    @classmethod
    def baseline(cls, **kw):
        """Every conditioning path switched off."""
        off = dict(use_retinex_cond=False, use_semantic_cond=False, use_frcm=False,
                   use_ircm=False, use_anet=False)
        off.update(kw)
        return cls(**off)

    @property
    def needs_decomposition(self):
        return self.use_retinex_cond or self.use_frcm or self.use_ircm


def _finite(x, stage, t):
    if not torch.isfinite(x).all():
        raise NumericalError(stage, t)
    return x


def retinex_condition(y, x_t, t, bundle, config):
    """ANet-adjusted (or raw, when ANet is off) condition for step ``t``."""
    dec = decompose(y, x_t, bundle.dnet)
    _finite(dec.R, "dnet", t)
    _finite(dec.L, "dnet", t)
    if config.use_anet:
        gamma = torch.full((y.shape[0],), float(bundle.schedule.gamma(t)), dtype=y.dtype)
        cond = adjust(dec, gamma, bundle.anet)
        for f in (cond.R, cond.L, *cond.F):
            _finite(f, "anet", t)
        return cond
    B, _, H, W = y.shape
    feats = zero_condition_features(bundle.anet.config, B, H, W, y.dtype, y.device)
    return RetinexCondition(dec.R, dec.L, feats)


def reverse_step(x_t, y, t, t_prev, bundle, config, seg=None):
    """One reverse step; returns ``(x_{t_prev}, refined x0 estimate)``."""
    cond = retinex_condition(y, x_t, t, bundle, config) if config.needs_decomposition else None
    eps = predict_noise(x_t, y, cond if config.use_retinex_cond else None,
                        seg if config.use_semantic_cond else None, t, bundle.unet, bundle.schedule)
    x0_hat = _finite(approx_x0(x_t, eps, t, bundle.schedule), "approx_x0", t)
    refined = refine(x0_hat, cond, bundle.rnet, config.use_frcm, config.use_ircm).x0
    _finite(refined, "rnet", t)
    x_prev = _finite(ddim_step(x_t, refined, t, t_prev, bundle.schedule), "ddim", t)
    return x_prev, refined


def check_size(y):
    H, W = y.shape[-2:]
    if H % 16 or W % 16:
        raise ShapeError(
            f"image size {H}x{W} must be divisible by 16; pad by ({(-H) % 16}, {(-W) % 16}) rows/cols")


@torch.no_grad()
def sample(y, x_T, bundle, config, timesteps=None):
    """Run the reverse chain from ``x_T`` over ``timesteps`` (descending)."""
    check_size(y)
    if x_T.shape != y.shape:
        raise ShapeError(f"x_T {tuple(x_T.shape)} and y {tuple(y.shape)} differ")
    if timesteps is None:
        timesteps = ddim_timesteps(bundle.schedule.T, config.steps)
    if not timesteps:
        raise ParameterError("need at least one timestep")
    seg = extract(y, bundle.seg_backbone) if config.use_semantic_cond else None
    x = x_T
    refined = None
    nexts = list(timesteps[1:]) + [0]
    for t, t_prev in zip(timesteps, nexts):
        x, refined = reverse_step(x, y, t, t_prev, bundle, config, seg)
    return refined


def enhance(y, bundle, config=None):
    """Enhance a B x 3 x H x W low-light batch in [0, 1]."""
    config = config or SamplerConfig()
    check_size(y)
    gen = torch.Generator().manual_seed(config.seed)
    x_T = torch.randn(y.shape, generator=gen, dtype=y.dtype)
    return sample(y, x_T, bundle, config)
