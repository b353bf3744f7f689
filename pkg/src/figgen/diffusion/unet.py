"""Time- and text-conditional denoising U-Net over the latent grid.

Residual blocks carry the timestep embedding; at the configured feature-map
sizes a transformer block applies self-attention followed by cross-attention
into the caption context. Output shape always equals input shape.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from figgen.autoencoder.model import _norm
from figgen.text_encoder import masked_attention


@dataclass
class UNetConfig:
    latent_size: int = 64
    in_channels: int = 4
    base_channels: int = 256
    num_res_blocks: int = 3
    attention_resolutions: Tuple[int, ...] = (64, 32, 16)
    channel_mult: Tuple[int, ...] = (1, 2, 4, 4)
    dropout: float = 0.0
    context_dim: int = 512
    num_heads: int = 8
    time_embed_dim: int = 1024

    def feature_sizes(self) -> Tuple[int, ...]:
        return tuple(self.latent_size // 2**i for i in range(len(self.channel_mult)))

    def validate(self) -> None:
        if self.num_res_blocks < 1 or self.base_channels < 1:
            raise ValueError("base_channels and num_res_blocks must be >= 1")
        sizes = self.feature_sizes()
        if sizes[-1] < 1:
            raise ValueError(f"channel_mult {self.channel_mult} downsamples below 1 pixel")
        unknown = set(self.attention_resolutions) - set(sizes)
        if unknown:
            raise ValueError(
                f"attention resolutions {sorted(unknown)} not in the downsampling chain {sizes}"
            )
        if self.base_channels % self.num_heads != 0:
            raise ValueError("base_channels must be divisible by num_heads")


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps; (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32) / half)
    args = t.to(torch.float32)[:, None] * freqs[None, :]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _residual_init(module: nn.Module, gain: float = 0.1) -> nn.Module:
    """Damp residual-branch outputs at init; keeps conditioning live but small."""
    for p in module.parameters():
        p.data.mul_(gain)
    return module


class TimedResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, dropout: float = 0.0):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()
        self.conv2 = _residual_init(nn.Conv2d(out_ch, out_ch, 3, padding=1))
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(self.dropout(F.silu(self.norm2(h))))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Queries from the feature map, keys/values from the caption context.

    The output projection has no bias, so a fully masked (or absent) context
    contributes exactly zero through the residual connection.
    """

    def __init__(self, channels: int, context_dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.proj = nn.Linear(channels, channels, bias=False)

    def forward(self, x, context, context_mask):
        b, l, c = x.shape
        q = self.to_q(x)
        k = self.to_k(context)
        v = self.to_v(context)
        split = lambda t: t.view(b, t.shape[1], self.num_heads, -1).transpose(1, 2)
        out = masked_attention(split(q), split(k), split(v), context_mask)
        return self.proj(out.transpose(1, 2).reshape(b, l, c))


class SpatialTransformerBlock(nn.Module):
    def __init__(self, channels: int, context_dim: int, num_heads: int):
        super().__init__()
        self.norm = _norm(channels)
        self.proj_in = nn.Conv2d(channels, channels, 1)
        self.ln1 = nn.LayerNorm(channels)
        self.self_attn = CrossAttention(channels, channels, num_heads)
        self.ln2 = nn.LayerNorm(channels)
        self.cross_attn = CrossAttention(channels, context_dim, num_heads)
        self.ln3 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, 4 * channels),
            nn.GELU(),
            nn.Linear(4 * channels, channels),
        )
        self.proj_out = _residual_init(nn.Conv2d(channels, channels, 1))

    def forward(self, x, context, context_mask):
        b, c, h, w = x.shape
        t = self.proj_in(self.norm(x)).view(b, c, h * w).transpose(1, 2)
        y = self.ln1(t)
        t = t + self.self_attn(y, y, None)
        if context is not None:
            t = t + self.cross_attn(self.ln2(t), context, context_mask)
        t = t + self.mlp(self.ln3(t))
        t = t.transpose(1, 2).view(b, c, h, w)
        return x + self.proj_out(t)


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


class ConditionalUNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        config.validate()
        self.config = config
        c = config.base_channels
        ted = config.time_embed_dim
        attn_sizes = set(config.attention_resolutions)

        self.time_mlp = nn.Sequential(nn.Linear(c, ted), nn.SiLU(), nn.Linear(ted, ted))
        self.conv_in = nn.Conv2d(config.in_channels, c, 3, padding=1)

        def transformer(ch):
            return SpatialTransformerBlock(ch, config.context_dim, config.num_heads)

        self.down_blocks = nn.ModuleList()
        skip_chans = [c]
        ch = c
        size = config.latent_size
        for level, mult in enumerate(config.channel_mult):
            for _ in range(config.num_res_blocks):
                block = nn.ModuleDict({"res": TimedResBlock(ch, c * mult, ted, config.dropout)})
                ch = c * mult
                if size in attn_sizes:
                    block["attn"] = transformer(ch)
                self.down_blocks.append(block)
                skip_chans.append(ch)
            if level < len(config.channel_mult) - 1:
                self.down_blocks.append(nn.ModuleDict({"down": Downsample(ch)}))
                skip_chans.append(ch)
                size //= 2

        self.mid_res1 = TimedResBlock(ch, ch, ted, config.dropout)
        self.mid_attn = transformer(ch) if size in attn_sizes else None
        self.mid_res2 = TimedResBlock(ch, ch, ted, config.dropout)

        self.up_blocks = nn.ModuleList()
        for level, mult in reversed(list(enumerate(config.channel_mult))):
            for _ in range(config.num_res_blocks + 1):
                block = nn.ModuleDict(
                    {"res": TimedResBlock(ch + skip_chans.pop(), c * mult, ted, config.dropout)}
                )
                ch = c * mult
                if size in attn_sizes:
                    block["attn"] = transformer(ch)
                self.up_blocks.append(block)
            if level > 0:
                self.up_blocks.append(nn.ModuleDict({"up": Upsample(ch)}))
                size *= 2

        self.norm_out = _norm(ch)
        self.conv_out = _residual_init(nn.Conv2d(ch, config.in_channels, 3, padding=1))

    def forward(
        self,
        x: torch.Tensor,
        t,
        context: Optional[torch.Tensor] = None,
        context_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Predict the injected noise for latents x at timesteps t."""
        if x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} input channels, got {x.shape[1]}")
        if context is not None and context.shape[-1] != self.config.context_dim:
            raise ValueError(
                f"context width {context.shape[-1]} != context_dim {self.config.context_dim}"
            )
        t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
        if t.numel() == 1:
            t = t.expand(x.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.config.base_channels).to(x.dtype))

        h = self.conv_in(x)
        skips: List[torch.Tensor] = [h]
        for block in self.down_blocks:
            if "down" in block:
                h = block["down"](h)
            else:
                h = block["res"](h, temb)
                if "attn" in block:
                    h = block["attn"](h, context, context_mask)
            skips.append(h)

        h = self.mid_res1(h, temb)
        if self.mid_attn is not None:
            h = self.mid_attn(h, context, context_mask)
        h = self.mid_res2(h, temb)

        for block in self.up_blocks:
            if "up" in block:
                h = block["up"](h)
            else:
                h = block["res"](torch.cat([h, skips.pop()], dim=1), temb)
                if "attn" in block:
                    h = block["attn"](h, context, context_mask)

        return self.conv_out(F.silu(self.norm_out(h)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
