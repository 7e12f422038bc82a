import numpy as np
import pytest
import torch

from retinex_diffusion.adjustment import ANetConfig
from retinex_diffusion.bundle import ModelBundle, ModelConfig
from retinex_diffusion.decomposition import DNetConfig
from retinex_diffusion.denoiser import UNetConfig
from retinex_diffusion.refinement import RNetConfig
from retinex_diffusion.semantic import BackboneSpec

torch.set_num_threads(1)


def tiny_config(**unet_kw):
    unet = dict(base_channels=8, channel_mults=(1, 1, 2, 2, 2), temb_dim=16)
    unet.update(unet_kw)
    return ModelConfig(
        dnet=DNetConfig(base_channels=4, depth=3),
        anet=ANetConfig(base_channels=4, depth=3, temb_dim=16),
        unet=UNetConfig(**unet),
        rnet=RNetConfig(channels=8, hidden=8),
        backbone=BackboneSpec(channel_counts=(16, 8, 8)),
        T=100,
    )


@pytest.fixture
def tiny_bundle():
    return ModelBundle.create(tiny_config(), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def perturb(module, scale=0.05, seed=0):
    """Add noise to every parameter so zero-initialised paths become active."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=p.dtype))
    return module


def batch(shape=(2, 3, 32, 32), seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.rand(shape, generator=gen, dtype=dtype)
    y = 0.2 * torch.rand(shape, generator=gen, dtype=dtype) + 0.1 * x0
    return y, x0


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
