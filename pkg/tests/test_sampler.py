import pytest
import torch

from conftest import batch, perturb
from oracles import OracleUNet, handwritten_ddim, plain_ddim
from retinex_diffusion.errors import NumericalError, ShapeError
from retinex_diffusion.sampler import SamplerConfig, enhance, reverse_step, sample


@pytest.fixture
def active_bundle(tiny_bundle):
    for name in ("dnet", "anet", "unet", "rnet"):
        perturb(getattr(tiny_bundle, name), 0.05, seed=len(name))
    return tiny_bundle.eval()


def test_baseline_matches_plain_sampler_bitwise(active_bundle):
    y, _ = batch((1, 3, 32, 32))
    x_T = torch.randn(y.shape, generator=torch.Generator().manual_seed(3))
    ours = sample(y, x_T, active_bundle, SamplerConfig.baseline())
    assert torch.equal(ours, plain_ddim(y, x_T, active_bundle, 8))
    torch.testing.assert_close(ours.double(), handwritten_ddim(y, x_T, active_bundle, 8), rtol=0, atol=1e-5)


def test_toggles_change_the_output(active_bundle):
    y, _ = batch((1, 3, 32, 32))
    base = enhance(y, active_bundle, SamplerConfig.baseline(steps=2))
    for flag in ("use_retinex_cond", "use_semantic_cond", "use_frcm", "use_ircm"):
        cfg = SamplerConfig.baseline(steps=2, **{flag: True})
        assert not torch.equal(enhance(y, active_bundle, cfg), base), flag


@pytest.mark.parametrize("use_anet", [True, False])
def test_oracle_denoiser_recovers_x0(tiny_bundle, use_anet):
    _, x0 = batch((2, 3, 32, 32), seed=7)
    tiny_bundle.unet = OracleUNet(x0)
    cfg = SamplerConfig(use_frcm=False, use_ircm=False, use_anet=use_anet)
    out = enhance(torch.rand_like(x0), tiny_bundle, cfg)
    assert (out - x0).abs().max() < 1e-4


def test_reverse_step_final_step_returns_refined(tiny_bundle):
    y, _ = batch((1, 3, 16, 16))
    x = torch.randn(y.shape)
    with torch.no_grad():
        x_prev, refined = reverse_step(x, y, 20, 0, tiny_bundle, SamplerConfig())
    assert torch.equal(x_prev, refined)
    assert refined.min() >= 0 and refined.max() <= 1


def test_enhance_contract(active_bundle):
    y, _ = batch((2, 3, 32, 48))
    a = enhance(y, active_bundle, SamplerConfig(seed=4))
    b = enhance(y, active_bundle, SamplerConfig(seed=4))
    c = enhance(y, active_bundle, SamplerConfig(seed=5))
    assert a.shape == y.shape and torch.equal(a, b) and not torch.equal(a, c)
    assert a.min() >= 0 and a.max() <= 1


def test_enhance_size_hint(tiny_bundle):
    with pytest.raises(ShapeError, match=r"pad by \(8, 0\)"):
        enhance(torch.rand(1, 3, 40, 32), tiny_bundle)


def test_semantic_prior_extracted_once(active_bundle):
    calls = []
    handle = active_bundle.seg_backbone.register_forward_hook(
        lambda m, i, o: calls.append(tuple(float(f.double().sum()) for f in o)))
    enhance(batch((1, 3, 32, 32))[0], active_bundle, SamplerConfig(steps=4))
    handle.remove()
    assert len(calls) == 1


def test_nan_names_stage_and_step(tiny_bundle):
    with torch.no_grad():
        tiny_bundle.rnet.ircm.W.bias.fill_(float("nan"))
    with pytest.raises(NumericalError) as info:
        enhance(batch((1, 3, 16, 16))[0], tiny_bundle, SamplerConfig(steps=2))
    assert info.value.stage == "rnet" and info.value.t == 100
