import numpy as np
import pytest
import torch

from conftest import perturb, tiny_config
from retinex_diffusion.bundle import ModelBundle
from retinex_diffusion.checkpoint import checkpoint_payload, load_checkpoint, resave, save_checkpoint
from retinex_diffusion.config import format_config, parse_config, read_config
from retinex_diffusion.data import load_image, load_pairs, save_image, to_image, to_tensor
from retinex_diffusion.errors import (CheckpointError, CheckpointVersionError, ConfigError, DatasetError,
                                      MissingEntryError, UnpairedImageError)
from retinex_diffusion.sampler import SamplerConfig
from retinex_diffusion.synthetic import make_toy_pairs
from retinex_diffusion.trainer import TrainConfig


@pytest.fixture
def bundle():
    b = ModelBundle.create(tiny_config(), seed=2)
    for n in ("anet", "unet", "rnet"):
        perturb(getattr(b, n), 0.01)
    return b


def test_checkpoint_round_trip_bytes(bundle, tmp_path):
    a = save_checkpoint(tmp_path / "a.pt", bundle, 7, TrainConfig.desk(), SamplerConfig(steps=4),
                        rng_state=torch.Generator().manual_seed(1).get_state())
    ck = load_checkpoint(a)
    b = resave(ck, tmp_path / "b.pt")
    assert a.read_bytes() == b.read_bytes()
    assert ck.iteration == 7 and ck.sampler_config["steps"] == 4
    assert ck.bundle.digest() == bundle.digest()
    assert not any(tmp_path.glob("*.tmp"))


def test_loaded_parameters_bit_identical(bundle, tmp_path):
    loaded = load_checkpoint(save_checkpoint(tmp_path / "c.pt", bundle)).bundle
    for name, sd in bundle.state_dicts().items():
        other = loaded.state_dicts()[name]
        assert all(torch.equal(v, other[k]) for k, v in sd.items())
    np.testing.assert_array_equal(loaded.schedule.gammas, bundle.schedule.gammas)


def test_version_mismatch(bundle, tmp_path):
    payload = checkpoint_payload(bundle)
    payload["version"] = 99
    torch.save(payload, tmp_path / "v.pt")
    with pytest.raises(CheckpointVersionError, match="99"):
        load_checkpoint(tmp_path / "v.pt")


@pytest.mark.parametrize("entry", ["dnet", "seg_backbone"])
def test_missing_entry_named(bundle, tmp_path, entry):
    payload = checkpoint_payload(bundle)
    del payload["entries"][entry]
    torch.save(payload, tmp_path / "m.pt")
    with pytest.raises(MissingEntryError) as info:
        load_checkpoint(tmp_path / "m.pt")
    assert info.value.entry == entry and entry in str(info.value)


def test_not_a_checkpoint(tmp_path):
    (tmp_path / "junk.pt").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.pt")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")


def test_error_kinds_are_distinct():
    kinds = {CheckpointVersionError, MissingEntryError, UnpairedImageError, DatasetError}
    assert len(kinds) == 4
    assert not issubclass(CheckpointVersionError, MissingEntryError)
    assert not issubclass(UnpairedImageError, CheckpointError)


def test_load_pairs(tmp_path):
    ds = load_pairs(make_toy_pairs(tmp_path, n=3, size=32))
    assert len(ds) == 3 and [p[0].name for p in ds.pairs] == ["000.png", "001.png", "002.png"]
    lo, hi = ds[0]
    assert lo.shape == hi.shape == (32, 32, 3) and lo.dtype == np.float32
    assert lo.mean() < hi.mean()


def test_unpaired_low_image(tmp_path):
    root = make_toy_pairs(tmp_path, n=2, size=16)
    save_image(root / "low" / "extra.png", np.zeros((16, 16, 3)))
    with pytest.raises(UnpairedImageError, match="extra.png") as info:
        load_pairs(root)
    assert info.value.path.name == "extra.png"


def test_unpaired_high_image(tmp_path):
    root = make_toy_pairs(tmp_path, n=2, size=16)
    (root / "low" / "001.png").unlink()
    with pytest.raises(UnpairedImageError, match="001.png"):
        load_pairs(root)


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetError, match="low"):
        load_pairs(tmp_path)
    root = make_toy_pairs(tmp_path / "d", n=1, size=16)
    save_image(root / "high" / "000.png", np.zeros((8, 16, 3)))
    with pytest.raises(DatasetError, match="000.png"):
        load_pairs(root)


def test_patch_batches_are_aligned_and_seeded(tmp_path):
    ds = load_pairs(make_toy_pairs(tmp_path, n=2, size=32))
    gen = torch.Generator().manual_seed(0)
    y, x = ds.sample_batch(3, 16, gen)
    y2, x2 = ds.sample_batch(3, 16, torch.Generator().manual_seed(0))
    assert y.shape == x.shape == (3, 3, 16, 16)
    assert torch.equal(y, y2) and torch.equal(x, x2)


def test_image_round_trip(tmp_path, rng):
    img = np.round(rng.uniform(size=(8, 12, 3)) * 255) / 255
    save_image(tmp_path / "i.png", img)
    back = load_image(tmp_path / "i.png")
    np.testing.assert_allclose(back, img, atol=1e-6)
    np.testing.assert_array_equal(to_image(to_tensor(back)), back)


def test_config_defaults():
    train, sampler = read_config()
    assert train.lr == 1e-4 and train.batch_size == 8 and train.patch_size == 256
    assert sampler.steps == 8
    assert (train.adam_beta1, train.adam_beta2) == (0.9, 0.999)
    assert train.lr_decay == 0.5 and train.lr_decay_every == 100_000


def test_config_parsing(tmp_path):
    text = """
    # desk run
    batch_size = 2
    patch_size = 64
    lr_decay_every = 2e3
    lambda_anet = 0.25   # down-weighted
    flip = off
    steps = 4
    sampler.seed = 11
    seed = 3
    """
    train, sampler = parse_config(text)
    assert (train.batch_size, train.patch_size, train.lr_decay_every) == (2, 64, 2000)
    assert train.lambda_anet == 0.25 and train.flip is False and train.seed == 3
    assert sampler.steps == 4 and sampler.seed == 11
    path = tmp_path / "c.cfg"
    path.write_text(format_config(train, sampler))
    assert read_config(path) == (train, sampler)


@pytest.mark.parametrize("text", ["bogus = 1", "batch_size = two", "patch_size = 40", "flip = maybe",
                                  "no equals sign", "sampler.batch_size = 2"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)
