"""Adversarial and L1-augmented objectives.

Discriminator outputs are logits; ``softplus(-x) = -log sigmoid(x)`` and
``softplus(x) = -log(1 - sigmoid(x))`` keep everything finite for finite
logits. The generator uses the non-saturating form ``-log D(G(.))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError
from .networks import discriminator_forward


@dataclass(frozen=True)
class LossConfig:
    lambda_l1: float = 100.0
    adversarial_form: str = "cross_entropy"

    def __post_init__(self):
        if not self.lambda_l1 >= 0:
            raise ConfigError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.adversarial_form != "cross_entropy":
            raise ConfigError(
                f"unsupported adversarial_form {self.adversarial_form!r}; only 'cross_entropy'")


def sample_noise(length: int, seed: int) -> np.ndarray:
    """Standard normal noise vector for the unconditional reference objective."""
    return np.random.default_rng(seed).standard_normal(length)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def d_loss_from_logits(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """Real patches pushed toward 1 and fake toward 0; each term averaged, then summed."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def g_adv_from_logits(fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-fake_logits).mean()


def gan_loss_reference(d_out_real, d_out_fake):
    """Unconditional min-max objective on logits: returns ``(d_loss, g_loss)``."""
    real = torch.as_tensor(d_out_real, dtype=torch.float64)
    fake = torch.as_tensor(d_out_fake, dtype=torch.float64)
    _same_shape(real, fake, "gan_loss_reference")
    return float(d_loss_from_logits(real, fake)), float(g_adv_from_logits(fake))


def mgan_d_loss(D, cond, real_pet, fake_pet) -> torch.Tensor:
    """Discriminator loss; ``fake_pet`` is detached so no gradient reaches G."""
    _same_shape(real_pet, fake_pet, "mgan_d_loss")
    real_logits = discriminator_forward(D, cond, real_pet)
    fake_logits = discriminator_forward(D, cond, fake_pet.detach())
    return d_loss_from_logits(real_logits, fake_logits)


def mgan_g_loss(D, cond, fake_pet, real_pet, cfg: LossConfig = LossConfig()):
    """Return ``(total, adv, l1)`` with ``total = adv + lambda_l1 * mean|real - fake|``."""
    _same_shape(real_pet, fake_pet, "mgan_g_loss")
    adv = g_adv_from_logits(discriminator_forward(D, cond, fake_pet))
    l1 = (real_pet - fake_pet).abs().mean()
    return adv + cfg.lambda_l1 * l1, adv, l1
