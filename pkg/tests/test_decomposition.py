import pytest
import torch

from retinex_diffusion.decomposition import (DNet, DNetConfig, Decomposition, decompose,
                                             dnet_pretrain_loss, smoothness)
from retinex_diffusion.errors import ShapeError


def test_outputs_bounded_and_shaped():
    net = DNet(DNetConfig(base_channels=4, depth=3))
    y, x = torch.rand(2, 3, 16, 24), 3 * torch.randn(2, 3, 16, 24)
    R, L = decompose(y, x, net)
    assert R.shape == (2, 3, 16, 24) and L.shape == (2, 1, 16, 24)
    for m in (R, L):
        assert m.min() >= 0 and m.max() <= 1


def test_deterministic():
    net = DNet(DNetConfig(base_channels=4))
    y, x = torch.rand(1, 3, 16, 16), torch.randn(1, 3, 16, 16)
    a, b = decompose(y, x, net), decompose(y, x, net)
    assert torch.equal(a.R, b.R) and torch.equal(a.L, b.L)


def test_shape_errors():
    net = DNet(DNetConfig(base_channels=4, depth=3))
    with pytest.raises(ShapeError):
        decompose(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 8, 16), net)
    with pytest.raises(ShapeError):
        decompose(torch.rand(1, 3, 12, 12), torch.rand(1, 3, 12, 12), net)


def test_config_invariants():
    with pytest.raises(ValueError):
        DNetConfig(depth=0)
    with pytest.raises(ValueError):
        DNetConfig(base_channels=2)


def test_perfect_identical_pair_has_zero_rec_and_cr():
    R = torch.rand(1, 3, 8, 8)
    L = torch.rand(1, 1, 8, 8)
    img = R * L
    _, parts = dnet_pretrain_loss(img, img, Decomposition(R, L), Decomposition(R, L))
    assert float(parts["rec"]) == 0.0
    assert float(parts["cr"]) == 0.0


def test_constant_illumination_is_smooth():
    assert float(smoothness(torch.full((1, 1, 6, 6), 0.4), torch.rand(1, 3, 6, 6))) == 0.0


def test_constant_reflectance_hand_case():
    L = torch.ones(1, 1, 2, 2)
    low = Decomposition(torch.full((1, 3, 2, 2), 0.2), L)
    high = Decomposition(torch.full((1, 3, 2, 2), 0.5), L)
    _, parts = dnet_pretrain_loss(torch.zeros(1, 3, 2, 2), torch.zeros(1, 3, 2, 2), low, high)
    assert float(parts["cr"]) == pytest.approx(0.3, abs=1e-7)
