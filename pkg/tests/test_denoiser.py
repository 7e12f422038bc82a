import pytest
import torch

from conftest import perturb
from retinex_diffusion.adjustment import RetinexCondition
from retinex_diffusion.denoiser import (ConditionalUNet, RetinexAttention, SemanticAttention, UNetConfig,
                                        predict_noise, retinex_attention, semantic_attention, unet_loss)
from retinex_diffusion.diffusion import make_schedule
from retinex_diffusion.errors import NumericalError, ShapeError
from retinex_diffusion.semantic import SemanticPrior


def small_config(**kw):
    base = dict(base_channels=8, channel_mults=(1, 1, 2, 2, 2), temb_dim=16, semantic_channels=(8, 8, 8))
    base.update(kw)
    return UNetConfig(**base)


def inputs(H=32, W=32, B=2, seed=0):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(B, 3, H, W, generator=g)
    y = torch.rand(B, 3, H, W, generator=g)
    cond = RetinexCondition(torch.rand(B, 3, H, W, generator=g), torch.rand(B, 1, H, W, generator=g), ())
    seg = SemanticPrior(*(torch.randn(B, 8, H // s, W // s, generator=g) for s in (16, 8, 4)))
    return x, y, cond, seg


def test_retinex_attention_identity_at_init_and_shapes():
    layer = RetinexAttention(8)
    F_i = torch.randn(1, 8, 8, 8)
    R_em, L_em = layer.embed((8, 8), torch.rand(1, 3, 32, 32), torch.rand(1, 1, 32, 32))
    assert R_em.shape[-2:] == (8, 8) and L_em.shape[-2:] == (4, 4)
    assert torch.equal(retinex_attention(F_i, R_em, layer.attn_R, layer.norm_r), F_i)


def test_retinex_attention_is_position_aware():
    layer = perturb(RetinexAttention(8), 0.3)
    g = torch.Generator().manual_seed(4)
    F_i, P = torch.randn(1, 8, 8, 8, generator=g), torch.randn(1, 8, 8, 8, generator=g)
    perm = torch.randperm(64, generator=g)
    P_perm = P.flatten(2)[..., perm].reshape_as(P)
    out = retinex_attention(F_i, P, layer.attn_R, layer.norm_r)
    assert out.shape == F_i.shape
    assert not torch.allclose(out, retinex_attention(F_i, P_perm, layer.attn_R, layer.norm_r))


def semantic_case():
    layer = perturb(SemanticAttention(8, 4), 0.2)
    g = torch.Generator().manual_seed(5)
    return layer, torch.randn(1, 8, 4, 4, generator=g), torch.randn(1, 4, 4, 4, generator=g)


def test_semantic_attention_initial_weights():
    layer = SemanticAttention(8, 4)
    assert float(layer.lambda_sa) == 1.0 and float(layer.lambda_ca) == 0.0


def test_semantic_attention_lambda_algebra():
    layer, F_i, F_s = semantic_case()
    sa, ca = layer.branches(F_i, F_s)
    with torch.no_grad():
        layer.lambda_sa.fill_(0.0)
        layer.lambda_ca.fill_(0.0)
        assert torch.equal(semantic_attention(F_i, F_s, layer), F_i)
        layer.lambda_sa.fill_(0.7)
        torch.testing.assert_close(semantic_attention(F_i, F_s, layer) - F_i, 0.7 * sa, rtol=0, atol=1e-6)
        layer.lambda_ca.fill_(0.5)
        one = semantic_attention(F_i, F_s, layer) - F_i - 0.7 * sa
        layer.lambda_ca.fill_(1.0)
        two = semantic_attention(F_i, F_s, layer) - F_i - 0.7 * sa
    torch.testing.assert_close(two, 2 * one, rtol=0, atol=1e-6)
    assert one.abs().max() > 0


def test_semantic_attention_stride_mismatch():
    layer = SemanticAttention(8, 4)
    with pytest.raises(ShapeError):
        layer(torch.randn(1, 8, 4, 4), torch.randn(1, 4, 8, 8))


def test_config_rejects_misplaced_semantic_stage():
    with pytest.raises(ValueError):
        UNetConfig(semantic_attn_strides=(16, 8, 2))


def test_identity_at_init_matches_attention_free_unet():
    cfg = small_config(zero_init_attn=True, zero_init_ca=True)
    torch.manual_seed(0)
    full = ConditionalUNet(cfg)
    torch.manual_seed(0)
    plain = ConditionalUNet(small_config(zero_init_attn=True, retinex_attn_strides=(), semantic_attn_strides=()))
    missing, _ = plain.load_state_dict(full.state_dict(), strict=False)
    assert not missing
    x, y, cond, seg = inputs()
    with torch.no_grad():
        assert torch.equal(full(x, y, 0.5, cond, seg), plain(x, y, 0.5))
        assert torch.equal(full(x, y, 0.5, cond, seg), full(x, y, 0.5))


def test_default_init_is_also_identity():
    net = ConditionalUNet(small_config())
    x, y, cond, seg = inputs()
    with torch.no_grad():
        assert torch.equal(net(x, y, 0.3, cond, seg), net(x, y, 0.3))


def test_lambda_gradients_nonzero():
    net = perturb(ConditionalUNet(small_config()), 0.05)
    x, y, cond, seg = inputs()
    loss = unet_loss(torch.randn_like(x), net(x, y, 0.5, cond, seg))
    loss.backward()
    for layer in net.semantic.values():
        assert layer.lambda_sa.grad is not None and float(layer.lambda_sa.grad) != 0
        assert layer.lambda_ca.grad is not None and float(layer.lambda_ca.grad) != 0


def test_lambda_ca_gradient_nonzero_from_default_init():
    net = ConditionalUNet(small_config())
    x, y, cond, seg = inputs()
    unet_loss(torch.randn_like(x), net(x, y, 0.5, cond, seg)).backward()
    assert all(float(layer.lambda_ca.grad) != 0 for layer in net.semantic.values())


def test_predict_noise_contract():
    sched = make_schedule(100)
    net = ConditionalUNet(small_config())
    x, y, cond, seg = inputs()
    a = predict_noise(x, y, cond, seg, 40, net, sched)
    b = predict_noise(x, y, cond, seg, 40, net, sched)
    assert a.shape == x.shape and torch.equal(a, b)
    per_sample = predict_noise(x, y, cond, seg, torch.tensor([40, 40]), net, sched)
    assert torch.equal(a, per_sample)


def test_predict_noise_surfaces_nan_with_step():
    sched = make_schedule(100)
    net = ConditionalUNet(small_config())
    with torch.no_grad():
        net.out_conv.bias.fill_(float("nan"))
    x, y, cond, seg = inputs()
    with pytest.raises(NumericalError, match="17"):
        predict_noise(x, y, cond, seg, 17, net, sched)


def test_shape_errors():
    net = ConditionalUNet(small_config())
    with pytest.raises(ShapeError):
        net(torch.randn(1, 3, 24, 24), torch.rand(1, 3, 24, 24), 0.5)
    with pytest.raises(ShapeError):
        net(torch.randn(1, 3, 32, 32), torch.rand(1, 3, 16, 16), 0.5)


def test_unet_loss_hand_case():
    eps = torch.tensor([[[[0.5, -1.0], [2.0, 0.0]]]])
    eps_hat = torch.tensor([[[[0.0, -1.5], [1.0, 0.25]]]])
    expected = (0.25 + 0.25 + 1.0 + 0.0625) / 4
    assert abs(float(unet_loss(eps, eps_hat)) - expected) < 1e-7
