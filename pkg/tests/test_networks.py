import numpy as np
import pytest
import torch
from torch import nn

from mgan.core_data import CtImage, LabelMap, PairedStudy, PetImage
from mgan.errors import ContractError
from mgan.networks import (ChannelConfig, CheckpointMeta, FCNDetector, PatchDiscriminator,
                           UNetGenerator, build_detector, build_discriminator, build_generator,
                           detector_forward, discriminator_forward, generator_forward,
                           init_params, load_checkpoint, patch_grid_size, save_checkpoint,
                           unet_depth)


def conv_out(n, k, s, pad_total):
    return (n + pad_total - k) // s + 1


def test_channel_config():
    assert ChannelConfig("LB").in_channels == 1
    assert ChannelConfig("CT").in_channels == 1
    assert ChannelConfig("M").in_channels == 2
    with pytest.raises(ContractError):
        ChannelConfig("PET")


def test_condition_stacks_label_then_ct():
    s = PairedStudy("p", 0, LabelMap(np.ones((8, 8))), CtImage(np.zeros((8, 8))),
                    PetImage(np.zeros((8, 8))))
    c = ChannelConfig("M").condition(s)
    assert c.shape == (2, 8, 8) and c.dtype == np.float32
    assert (c[0] == 1).all() and (c[1] == -1).all()


@pytest.mark.parametrize("mode", ["M", "LB", "CT"])
def test_generator_shape_and_range(mode):
    G = build_generator(mode, 64, seed=0)
    c = ChannelConfig(mode).in_channels
    out = generator_forward(G.eval(), 5 * torch.randn(2, c, 64, 64))
    assert out.shape == (2, 1, 64, 64)
    assert out.abs().max() <= 1.0


def test_generator_depth_rule():
    assert unet_depth(8) == 3 and unet_depth(64) == 4 and unet_depth(256) == 6
    G = UNetGenerator(1, 128)
    assert len(G.encoder) == len(G.decoder) == 5


def test_generator_contract_errors():
    G = build_generator("M", 16, seed=0)
    with pytest.raises(ContractError):
        generator_forward(G, torch.zeros(1, 1, 16, 16))
    with pytest.raises(ContractError):
        generator_forward(G, torch.zeros(1, 2, 32, 32))


def test_patch_grid_matches_layer_arithmetic():
    for n in (8, 16, 32, 64, 128):
        m = n
        for k, s, p in [(4, 2, 2), (4, 2, 2), (4, 2, 2), (4, 1, 3), (4, 1, 3)]:
            m = conv_out(m, k, s, p)
        D = build_discriminator("M", n, seed=0)
        assert len(D.conv_layers) == 5
        out = discriminator_forward(D, torch.zeros(1, 2, n, n), torch.zeros(1, 1, n, n))
        assert out.shape[-2:] == (m, m) == (patch_grid_size(n),) * 2
    assert patch_grid_size(64) == 8 < 16


def test_discriminator_batch_independence_and_equivariance():
    D = build_discriminator("CT", 32, seed=3).eval()
    c, x = torch.randn(3, 1, 32, 32), torch.randn(3, 1, 32, 32)
    with torch.no_grad():
        single = discriminator_forward(D, c[:1], x[:1])
        double = discriminator_forward(D, c[:1].repeat(2, 1, 1, 1), x[:1].repeat(2, 1, 1, 1))
        assert torch.equal(double[0], double[1])
        torch.testing.assert_close(double[0], single[0])
        perm = torch.tensor([2, 0, 1])
        torch.testing.assert_close(discriminator_forward(D, c[perm], x[perm]),
                                   discriminator_forward(D, c, x)[perm])


def test_discriminator_misaligned_inputs():
    D = build_discriminator("LB", 16, seed=0)
    with pytest.raises(ContractError):
        discriminator_forward(D, torch.zeros(1, 1, 16, 16), torch.zeros(1, 1, 8, 8))
    with pytest.raises(ContractError):
        discriminator_forward(D, torch.zeros(2, 1, 16, 16), torch.zeros(1, 1, 16, 16))


def test_detector_shape_range_and_zero_params():
    F_ = build_detector(seed=0)
    p = detector_forward(F_, torch.rand(2, 1, 64, 64) * 2 - 1)
    assert p.shape == (2, 1, 64, 64) and (p >= 0).all() and (p <= 1).all()
    for q in F_.parameters():
        nn.init.zeros_(q)
    assert torch.equal(detector_forward(F_, torch.randn(1, 1, 16, 16)),
                       torch.full((1, 1, 16, 16), 0.5))
    with pytest.raises(ContractError):
        detector_forward(F_, torch.zeros(1, 1, 16, 16), image_size=64)


def test_detector_input_gradient_matches_central_differences():
    F_ = build_detector(seed=1).double()
    x = torch.randn(1, 1, 8, 8, dtype=torch.float64, requires_grad=True)
    detector_forward(F_, x).sum().backward()
    rng = np.random.default_rng(0)
    nonzero = 0
    for _ in range(10):
        i, j = rng.integers(8, size=2)
        e = torch.zeros_like(x)
        e[0, 0, i, j] = 1e-6
        with torch.no_grad():
            fd = (detector_forward(F_, x + e).sum() - detector_forward(F_, x - e).sum()) / 2e-6
        assert abs(fd.item() - x.grad[0, 0, i, j].item()) <= 1e-6 + 1e-4 * abs(fd.item())
        nonzero += abs(fd.item()) > 0
    assert nonzero > 0


def test_init_statistics_and_seeds():
    G = build_generator("M", 64, seed=7)
    w = torch.cat([m.weight.flatten() for m in G.modules()
                   if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d))])
    assert w.numel() >= 10_000
    assert abs(w.std().item() - 0.02) <= 0.002 and abs(w.mean().item()) < 1e-3
    same = build_generator("M", 64, seed=7)
    other = build_generator("M", 64, seed=8)
    sd, sd_same, sd_other = G.state_dict(), same.state_dict(), other.state_dict()
    assert all(torch.equal(sd[k], sd_same[k]) for k in sd)
    assert any(not torch.equal(sd[k], sd_other[k]) for k in sd)


def test_inference_is_deterministic():
    G = build_generator("LB", 16, seed=0).eval()
    x = torch.randn(2, 1, 16, 16)
    assert torch.equal(generator_forward(G, x), generator_forward(G, x))


def test_skip_connections_are_live():
    G = build_generator("M", 32, seed=0).eval()
    x = torch.randn(1, 2, 32, 32)
    with torch.no_grad():
        assert not torch.allclose(G(x), G(x, skip_scale=0.0))


@pytest.mark.parametrize("builder", [
    lambda: build_generator("CT", 16, seed=2),
    lambda: build_discriminator("M", 16, seed=2),
    lambda: build_detector(seed=2),
])
def test_checkpoint_roundtrip(tmp_path, builder):
    model = builder()
    meta = CheckpointMeta(model.arch(), "CT", 2, 5)
    f = save_checkpoint(model, tmp_path / "m", meta)
    assert f.suffix == ".safetensors" and (tmp_path / "m.json").is_file()
    back, meta2 = load_checkpoint(tmp_path / "m")
    assert meta2 == meta and back.mode == "CT"
    sd, sd2 = model.state_dict(), back.state_dict()
    assert all(torch.equal(sd[k], sd2[k]) for k in sd)
    # checkpoint bytes depend on content only
    save_checkpoint(back, tmp_path / "again", meta)
    assert f.read_bytes() == (tmp_path / "again.safetensors").read_bytes()


def test_instance_norm_skipped_at_one_pixel():
    D = PatchDiscriminator(1, 8, image_size=8)
    out = D(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8))
    assert out.shape == (1, 1, 1, 1)
    assert isinstance(init_params(FCNDetector(4), 0), FCNDetector)
