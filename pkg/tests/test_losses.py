import math

import numpy as np
import pytest
import torch
from torch import nn

from mgan.errors import ConfigError, ContractError
from mgan.losses import (LossConfig, gan_loss_reference, mgan_d_loss, mgan_g_loss,
                         sample_noise)
from mgan.networks import build_discriminator

LN2 = math.log(2.0)


class ScaledCandidate(nn.Module):
    """Stand-in discriminator whose logit is ``scale * candidate`` per pixel."""

    cond_channels = 1

    def __init__(self, scale=10.0):
        super().__init__()
        self.scale = scale

    def forward(self, cond, candidate):
        return self.scale * candidate


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_reference_at_zero_logits():
    d, g = gan_loss_reference(np.zeros((3, 3)), np.zeros((3, 3)))
    assert d == pytest.approx(2 * LN2, abs=1e-12)
    assert g == pytest.approx(LN2, abs=1e-12)


def test_reference_limit_and_finiteness():
    d, g = gan_loss_reference(np.full(4, 200.0), np.full(4, -200.0))
    assert d < 1e-80 and math.isfinite(g)
    d, g = gan_loss_reference(np.full(4, -1e4), np.full(4, 1e4))
    assert math.isfinite(d) and math.isfinite(g)


def test_reference_matches_elementwise_formula(rng):
    for _ in range(20):
        r, f = rng.normal(0, 2, (3, 3)), rng.normal(0, 2, (3, 3))
        d, g = gan_loss_reference(r, f)
        assert d == pytest.approx(np.mean(-np.log(sigmoid(r))) + np.mean(-np.log(1 - sigmoid(f))),
                                  abs=1e-12)
        assert g == pytest.approx(np.mean(-np.log(sigmoid(f))), abs=1e-12)


def test_reference_shape_mismatch():
    with pytest.raises(ContractError):
        gan_loss_reference(np.zeros((2, 2)), np.zeros((3, 3)))


def test_noise_vector():
    z = sample_noise(100, 3)
    assert z.shape == (100,) and np.array_equal(z, sample_noise(100, 3))


def test_d_loss_zero_and_saturated():
    c = torch.zeros(2, 1, 8, 8)
    zero = ScaledCandidate(0.0)
    assert mgan_d_loss(zero, c, torch.ones(2, 1, 8, 8), -torch.ones(2, 1, 8, 8)).item() == \
        pytest.approx(2 * LN2)
    D = ScaledCandidate(10.0)
    val = mgan_d_loss(D, c, torch.ones(2, 1, 8, 8, dtype=torch.float64),
                      -torch.ones(2, 1, 8, 8, dtype=torch.float64)).item()
    assert val == pytest.approx(2 * math.log1p(math.exp(-10)), rel=1e-9)
    assert val == pytest.approx(9.08e-5, abs=5e-8)


def test_d_loss_swap_symmetry():
    D = ScaledCandidate(3.0)
    c = torch.zeros(1, 1, 8, 8)
    a, b = torch.full((1, 1, 8, 8), 0.5), torch.full((1, 1, 8, 8), -0.5)
    sym = ScaledCandidate(-3.0)
    assert mgan_d_loss(D, c, a, b).item() == pytest.approx(mgan_d_loss(sym, c, b, a).item())


def test_d_loss_detaches_fake():
    D = build_discriminator("LB", 8, seed=0)
    fake = torch.zeros(1, 1, 8, 8, requires_grad=True)
    mgan_d_loss(D, torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8), fake).backward()
    assert fake.grad is None


def test_d_loss_decreases_as_real_logits_rise():
    c = torch.zeros(1, 1, 8, 8)
    fake = -torch.ones(1, 1, 8, 8)
    vals = [mgan_d_loss(ScaledCandidate(1.0), c, torch.full((1, 1, 8, 8), v), fake).item()
            for v in (-1.0, 0.0, 1.0, 2.0)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_g_loss_identity_and_lambda_cases():
    c = torch.zeros(1, 1, 8, 8)
    real = torch.rand(1, 1, 8, 8, dtype=torch.float64)
    total, adv, l1 = mgan_g_loss(ScaledCandidate(0.0), c, real.clone(), real)
    assert l1.item() == 0 and adv.item() == pytest.approx(LN2) and total.item() == pytest.approx(LN2)
    fake = real - 0.1
    total, adv, l1 = mgan_g_loss(ScaledCandidate(0.0), c, fake, real, LossConfig(100.0))
    assert (total - adv).item() == pytest.approx(10.0, abs=1e-9)
    total, adv, _ = mgan_g_loss(ScaledCandidate(0.0), c, fake, real, LossConfig(0.0))
    assert total.item() == adv.item()


def test_g_loss_monotone_in_lambda(rng):
    c = torch.zeros(1, 1, 8, 8)
    fake = torch.from_numpy(rng.uniform(-1, 1, (1, 1, 8, 8)))
    real = torch.from_numpy(rng.uniform(-1, 1, (1, 1, 8, 8)))
    totals = [mgan_g_loss(ScaledCandidate(1.0), c, fake, real, LossConfig(lam))[0].item()
              for lam in (0.0, 1.0, 10.0, 100.0)]
    assert totals == sorted(totals)


def test_losses_permutation_invariant(rng):
    D = build_discriminator("M", 16, seed=4).eval()
    c, real, fake = (torch.from_numpy(rng.normal(size=(4, k, 16, 16)).astype(np.float32))
                     for k in (2, 1, 1))
    p = torch.tensor([3, 1, 0, 2])
    torch.testing.assert_close(mgan_d_loss(D, c, real, fake), mgan_d_loss(D, c[p], real[p], fake[p]))
    torch.testing.assert_close(mgan_g_loss(D, c, fake, real)[0],
                               mgan_g_loss(D, c[p], fake[p], real[p])[0])


def test_shape_mismatch_and_config():
    D = ScaledCandidate()
    with pytest.raises(ContractError):
        mgan_g_loss(D, torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 16, 16))
    with pytest.raises(ContractError):
        mgan_d_loss(D, torch.zeros(1, 1, 8, 8), torch.zeros(2, 1, 8, 8), torch.zeros(1, 1, 8, 8))
    with pytest.raises(ConfigError):
        LossConfig(lambda_l1=-1)
    with pytest.raises(ConfigError):
        LossConfig(adversarial_form="hinge")
