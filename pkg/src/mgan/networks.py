"""Generator, discriminator and detector networks plus checkpoint I/O.

All tensors are NCHW. Images enter the networks in "net space" [-1, 1]
(``to_net``) and leave it through ``from_net``.

Discriminator layer table (kernel 4 throughout)::

    layer  stride  padding        out width   norm   activation
    1      2       1              w           -      LeakyReLU(0.2)
    2      2       1              2w          IN     LeakyReLU(0.2)
    3      2       1              4w          IN     LeakyReLU(0.2)
    4      1       (1,2,1,2)      8w          IN     LeakyReLU(0.2)
    5      1       (1,2,1,2)      1           -      (logits)

Instance norm is dropped on any layer whose output is 1x1. A 64x64 input gives an 8x8 patch grid and an 8x8 input a 1x1 grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from safetensors.torch import load_file, save_file
from torch import nn

from .errors import ContractError, InputError

INIT_STD = 0.02
MODES = ("LB", "CT", "M")


@dataclass(frozen=True)
class ChannelConfig:
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ContractError(f"channel mode must be one of {MODES}, got {self.mode!r}")

    @property
    def in_channels(self) -> int:
        return 2 if self.mode == "M" else 1

    def condition(self, study) -> np.ndarray:
        """Stack the study's conditioning channels, shape (C, H, W), net space."""
        if self.mode == "LB":
            chans = [study.label.values]
        elif self.mode == "CT":
            chans = [study.ct.values]
        else:
            chans = [study.label.values, study.ct.values]
        return to_net(np.stack(chans)).astype(np.float32)


def to_net(x):
    return x * 2.0 - 1.0


def from_net(y):
    return (y + 1.0) / 2.0


def unet_depth(image_size: int) -> int:
    return max(3, int(round(math.log2(image_size))) - 2)


def _check_size(image_size: int) -> None:
    if image_size < 8 or image_size & (image_size - 1):
        raise ContractError(f"image_size must be a power of two >= 8, got {image_size}")


class _Down(nn.Sequential):
    def __init__(self, cin, cout, norm):
        layers = [nn.Conv2d(cin, cout, 4, 2, 1)]
        if norm:
            layers.append(nn.InstanceNorm2d(cout, affine=True))
        layers.append(nn.LeakyReLU(0.2))
        super().__init__(*layers)


class _Up(nn.Sequential):
    def __init__(self, cin, cout, last, dropout):
        layers = [nn.ConvTranspose2d(cin, cout, 4, 2, 1)]
        if last:
            layers.append(nn.Tanh())
        else:
            layers.append(nn.InstanceNorm2d(cout, affine=True))
            if dropout:
                layers.append(nn.Dropout(dropout))
            layers.append(nn.ReLU())
        super().__init__(*layers)


class UNetGenerator(nn.Module):
    """U-Net with stride-2 encoder stages and transposed-conv decoder stages.

    Encoder stage ``i`` (1-based) feeds its output through a skip connection
    that is concatenated with the output of decoder stage ``depth - i``.
    Dropout in the first three decoder stages is the only noise source.
    """

    def __init__(self, in_channels: int, image_size: int = 64, base_width: int = 32,
                 dropout: float = 0.5):
        super().__init__()
        _check_size(image_size)
        self.in_channels = in_channels
        self.image_size = image_size
        self.base_width = base_width
        self.dropout = dropout
        self.depth = depth = unet_depth(image_size)
        widths = [base_width * 2 ** min(i, 3) for i in range(depth)]
        self.encoder = nn.ModuleList()
        cin = in_channels
        for i, w in enumerate(widths):
            spatial = image_size >> (i + 1)
            # no norm on the first stage, nor where statistics would be over 1 pixel
            self.encoder.append(_Down(cin, w, norm=i > 0 and spatial > 1))
            cin = w
        self.decoder = nn.ModuleList()
        for j in range(depth):
            last = j == depth - 1
            cin = widths[-1] if j == 0 else 2 * widths[depth - 1 - j]
            cout = 1 if last else widths[depth - j - 2]
            drop = dropout if (j < 3 and not last) else 0.0
            self.decoder.append(_Up(cin, cout, last, drop))

    def arch(self) -> dict:
        return {"kind": "generator", "in_channels": self.in_channels,
                "image_size": self.image_size, "base_width": self.base_width,
                "dropout": self.dropout}

    def forward(self, x, skip_scale: float = 1.0):
        skips = []
        for stage in self.encoder:
            x = stage(x)
            skips.append(x)
        x = self.decoder[0](x)
        for j, stage in enumerate(self.decoder[1:], start=1):
            x = stage(torch.cat([x, skip_scale * skips[self.depth - 1 - j]], dim=1))
        return x


class _SamePad(nn.ZeroPad2d):
    def __init__(self):
        super().__init__((1, 2, 1, 2))


class PatchDiscriminator(nn.Module):
    """Five convolutional layers ending in a grid of patch logits."""

    def __init__(self, cond_channels: int, base_width: int = 32, image_size: int = 64):
        super().__init__()
        _check_size(image_size)
        self.cond_channels = cond_channels
        self.base_width = base_width
        self.image_size = image_size
        w = base_width
        grid = patch_grid_size(image_size)

        def norm(c, spatial):
            # instance statistics over a single pixel are degenerate
            return [nn.InstanceNorm2d(c, affine=True)] if spatial > 1 else []

        self.net = nn.Sequential(
            nn.Conv2d(cond_channels + 1, w, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv2d(w, 2 * w, 4, 2, 1), *norm(2 * w, image_size // 4), nn.LeakyReLU(0.2),
            nn.Conv2d(2 * w, 4 * w, 4, 2, 1), *norm(4 * w, grid), nn.LeakyReLU(0.2),
            _SamePad(), nn.Conv2d(4 * w, 8 * w, 4, 1, 0), *norm(8 * w, grid), nn.LeakyReLU(0.2),
            _SamePad(), nn.Conv2d(8 * w, 1, 4, 1, 0),
        )

    def arch(self) -> dict:
        return {"kind": "discriminator", "cond_channels": self.cond_channels,
                "base_width": self.base_width, "image_size": self.image_size}

    @property
    def conv_layers(self) -> list[nn.Conv2d]:
        return [m for m in self.net if isinstance(m, nn.Conv2d)]

    def forward(self, cond, candidate):
        return self.net(torch.cat([cond, candidate], dim=1))


class FCNDetector(nn.Module):
    """Small fully convolutional encoder-decoder emitting per-pixel logits."""

    def __init__(self, width: int = 16):
        super().__init__()
        self.width = w = width
        self.enc0 = nn.Sequential(nn.Conv2d(1, w, 3, 1, 1), nn.ReLU(),
                                  nn.Conv2d(w, w, 3, 1, 1), nn.ReLU())
        self.enc1 = nn.Sequential(nn.Conv2d(w, 2 * w, 4, 2, 1), nn.ReLU(),
                                  nn.Conv2d(2 * w, 2 * w, 3, 1, 1), nn.ReLU())
        self.enc2 = nn.Sequential(nn.Conv2d(2 * w, 4 * w, 4, 2, 1), nn.ReLU())
        self.up2 = nn.Sequential(nn.ConvTranspose2d(4 * w, 2 * w, 4, 2, 1), nn.ReLU())
        self.dec1 = nn.Sequential(nn.Conv2d(4 * w, 2 * w, 3, 1, 1), nn.ReLU())
        self.up1 = nn.Sequential(nn.ConvTranspose2d(2 * w, w, 4, 2, 1), nn.ReLU())
        self.dec0 = nn.Sequential(nn.Conv2d(2 * w, w, 3, 1, 1), nn.ReLU())
        self.head = nn.Conv2d(w, 1, 1)

    def arch(self) -> dict:
        return {"kind": "detector", "width": self.width}

    def forward(self, x):
        e0 = self.enc0(x)
        e1 = self.enc1(e0)
        e2 = self.enc2(e1)
        d1 = self.dec1(torch.cat([self.up2(e2), e1], dim=1))
        d0 = self.dec0(torch.cat([self.up1(d1), e0], dim=1))
        return self.head(d0)


# --- functional contracts ----------------------------------------------------

def _spatial_ok(x: torch.Tensor, size: int | None, what: str) -> None:
    if x.dim() != 4:
        raise ContractError(f"{what}: expected NCHW tensor, got shape {tuple(x.shape)}")
    h, w = x.shape[-2:]
    if size is not None and (h, w) != (size, size):
        raise ContractError(f"{what}: expected {size}x{size} input, got {h}x{w}")
    if h & (h - 1) or w & (w - 1):
        raise ContractError(f"{what}: spatial dims must be powers of two, got {h}x{w}")


def generator_forward(G: UNetGenerator, cond: torch.Tensor) -> torch.Tensor:
    _spatial_ok(cond, G.image_size, "generator")
    if cond.shape[1] != G.in_channels:
        raise ContractError(
            f"generator expects {G.in_channels} conditioning channels, got {cond.shape[1]}")
    return G(cond)


def discriminator_forward(D: PatchDiscriminator, cond: torch.Tensor,
                          candidate: torch.Tensor) -> torch.Tensor:
    _spatial_ok(cond, None, "discriminator cond")
    if cond.shape[0] != candidate.shape[0] or cond.shape[-2:] != candidate.shape[-2:]:
        raise ContractError(
            f"discriminator inputs misaligned: {tuple(cond.shape)} vs {tuple(candidate.shape)}")
    if cond.shape[1] != D.cond_channels or candidate.shape[1] != 1:
        raise ContractError("discriminator channel mismatch")
    return D(cond, candidate)


def detector_forward(F: FCNDetector, pet: torch.Tensor, image_size: int | None = None) -> torch.Tensor:
    """Per-pixel tumor probabilities for a batch of PET images (net space)."""
    _spatial_ok(pet, image_size, "detector")
    if pet.shape[1] != 1:
        raise ContractError(f"detector expects 1 channel, got {pet.shape[1]}")
    return torch.sigmoid(F(pet))


def patch_grid_size(n: int) -> int:
    """Side of the discriminator's logit grid for an n x n input."""
    for stride in (2, 2, 2):
        n = (n + 2 - 4) // stride + 1
    return n  # the two stride-1 layers preserve size


# --- construction & persistence ----------------------------------------------

def init_params(module: nn.Module, seed: int) -> nn.Module:
    """Zero-mean Gaussian (std 0.02) conv weights, zero biases, norm gains ~ N(1, 0.02)."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * INIT_STD)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.InstanceNorm2d) and m.affine:
                m.weight.copy_(1.0 + torch.randn(m.weight.shape, generator=gen) * INIT_STD)
                m.bias.zero_()
    return module


def build(arch: dict, seed: int | None = None) -> nn.Module:
    arch = dict(arch)
    kind = arch.pop("kind")
    cls = {"generator": UNetGenerator, "discriminator": PatchDiscriminator,
           "detector": FCNDetector}.get(kind)
    if cls is None:
        raise ContractError(f"unknown architecture kind {kind!r}")
    model = cls(**arch)
    if seed is not None:
        init_params(model, seed)
    return model


def build_generator(mode: str, image_size: int, seed: int, base_width: int = 32,
                    dropout: float = 0.5) -> UNetGenerator:
    cc = ChannelConfig(mode)
    return init_params(UNetGenerator(cc.in_channels, image_size, base_width, dropout), seed)


def build_discriminator(mode: str, image_size: int, seed: int,
                        base_width: int = 32) -> PatchDiscriminator:
    cc = ChannelConfig(mode)
    return init_params(PatchDiscriminator(cc.in_channels, base_width, image_size), seed)


def build_detector(seed: int, width: int = 16) -> FCNDetector:
    return init_params(FCNDetector(width), seed)


@dataclass
class CheckpointMeta:
    arch: dict
    mode: str | None
    seed: int
    epoch: int
    extra: dict | None = None


def save_checkpoint(model: nn.Module, path, meta: CheckpointMeta) -> Path:
    """Write ``path.safetensors`` and a ``path.json`` sidecar; returns the tensor file."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tensors = {k: v.detach().contiguous().clone() for k, v in model.state_dict().items()}
        tensor_file = path.with_suffix(".safetensors")
        save_file(tensors, str(tensor_file))
        path.with_suffix(".json").write_text(
            json.dumps(asdict(meta), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write checkpoint {path}: {exc}") from exc
    return tensor_file


def load_checkpoint(path) -> tuple[nn.Module, CheckpointMeta]:
    path = Path(path)
    tensor_file, sidecar = path.with_suffix(".safetensors"), path.with_suffix(".json")
    for f in (tensor_file, sidecar):
        if not f.is_file():
            raise InputError(f"checkpoint file not found: {f}")
    meta = CheckpointMeta(**json.loads(sidecar.read_text(encoding="utf-8")))
    model = build(meta.arch)
    try:
        model.load_state_dict(load_file(str(tensor_file)))
    except RuntimeError as exc:
        raise ContractError(f"checkpoint {tensor_file} does not match its architecture: {exc}") from exc
    if meta.mode is not None:
        model.mode = meta.mode
    model.eval()
    return model, meta
