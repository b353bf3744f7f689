"""Convolutional KL autoencoder compressing images by a factor f into a
diagonal-Gaussian latent grid.

Public tensors are Bx3xSxS in [0,1]; internally the network works in
[-1,1] and the decoder's tanh maps back to [0,1].
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0


@dataclass
class AutoencoderConfig:
    input_resolution: int = 512
    embed_dim: int = 4
    base_channels: int = 128
    num_res_blocks: int = 2
    channel_mult: Tuple[int, ...] = (1, 2, 4, 4)
    dropout: float = 0.0
    disc_weight: float = 0.5
    vgg_weight: float = 0.2
    ocr_weight: float = 0.8
    kl_weight: float = 1e-6

    @property
    def downsample_factor(self) -> int:
        return 2 ** (len(self.channel_mult) - 1)

    @property
    def latent_size(self) -> int:
        return self.input_resolution // self.downsample_factor

    def validate(self) -> None:
        for name in ("disc_weight", "vgg_weight", "ocr_weight", "kl_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.input_resolution % self.downsample_factor != 0:
            raise ValueError(
                f"input_resolution {self.input_resolution} not divisible by "
                f"downsample factor {self.downsample_factor}"
            )
        if self.embed_dim < 1 or self.base_channels < 1 or self.num_res_blocks < 1:
            raise ValueError("embed_dim, base_channels, num_res_blocks must be >= 1")


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over the latent grid; logvar clamped for stability."""

    mean: torch.Tensor
    logvar: torch.Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.logvar is None:
            self.logvar = torch.zeros_like(self.mean)
        self.logvar = self.logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)

    def sample(self, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype)
        return self.mean + torch.exp(0.5 * self.logvar) * eps

    @property
    def std(self) -> torch.Tensor:
        return torch.exp(0.5 * self.logvar)


def _num_groups(channels: int) -> int:
    for g in range(min(32, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(_num_groups(channels), channels, eps=1e-6)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = _norm(out_ch)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        return h + self.skip(x)


class Downsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


class Encoder(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        c = config.base_channels
        mults = config.channel_mult
        self.conv_in = nn.Conv2d(3, c, 3, padding=1)
        blocks = []
        ch = c
        for level, mult in enumerate(mults):
            out_ch = c * mult
            for _ in range(config.num_res_blocks):
                blocks.append(ResBlock(ch, out_ch, config.dropout))
                ch = out_ch
            if level < len(mults) - 1:
                blocks.append(Downsample(ch))
        blocks += [ResBlock(ch, ch, config.dropout), ResBlock(ch, ch, config.dropout)]
        self.blocks = nn.Sequential(*blocks)
        self.norm_out = _norm(ch)
        self.conv_out = nn.Conv2d(ch, 2 * config.embed_dim, 3, padding=1)

    def forward(self, x):
        h = self.blocks(self.conv_in(x))
        return self.conv_out(F.silu(self.norm_out(h)))


class Decoder(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        c = config.base_channels
        mults = config.channel_mult
        ch = c * mults[-1]
        self.conv_in = nn.Conv2d(config.embed_dim, ch, 3, padding=1)
        blocks = [ResBlock(ch, ch, config.dropout), ResBlock(ch, ch, config.dropout)]
        for level, mult in reversed(list(enumerate(mults))):
            out_ch = c * mult
            for _ in range(config.num_res_blocks):
                blocks.append(ResBlock(ch, out_ch, config.dropout))
                ch = out_ch
            if level > 0:
                blocks.append(Upsample(ch))
        self.blocks = nn.Sequential(*blocks)
        self.norm_out = _norm(ch)
        self.conv_out = nn.Conv2d(ch, 3, 3, padding=1)

    def forward(self, z):
        h = self.blocks(self.conv_in(z))
        return self.conv_out(F.silu(self.norm_out(h)))


class KLAutoencoder(nn.Module):
    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder = Encoder(config)
        self.decoder = Decoder(config)

    @property
    def last_layer(self) -> torch.Tensor:
        """Final decoder conv weight; anchor for the adaptive adversarial weight."""
        return self.decoder.conv_out.weight

    def encode(self, images: torch.Tensor) -> LatentDistribution:
        """Bx3xSxS in [0,1] -> diagonal Gaussian over Bx(embed_dim)x(S/f)x(S/f)."""
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValueError(f"expected Bx3xSxS input, got {tuple(images.shape)}")
        f = self.config.downsample_factor
        if images.shape[2] != images.shape[3]:
            raise ValueError(f"expected a square input, got {tuple(images.shape)}")
        if images.shape[2] % f != 0:
            raise ValueError(f"input side {images.shape[2]} not divisible by f={f}")
        moments = self.encoder(images * 2.0 - 1.0)
        mean, logvar = torch.chunk(moments, 2, dim=1)
        return LatentDistribution(mean, logvar)

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """Bx(embed_dim)xhxw latents -> Bx3x(h*f)x(w*f) images in [0,1]."""
        if latents.ndim != 4 or latents.shape[1] != self.config.embed_dim:
            raise ValueError(
                f"expected Bx{self.config.embed_dim}xhxw latents, got {tuple(latents.shape)}"
            )
        return (torch.tanh(self.decoder(latents)) + 1.0) / 2.0

    def forward(self, images: torch.Tensor, generator: Optional[torch.Generator] = None):
        dist = self.encode(images)
        recon = self.decode(dist.sample(generator=generator))
        return recon, dist

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
