"""Transformer caption encoder trained end-to-end with the diffusion model.

Pre-norm encoder stack with learned positional embeddings; the full token
sequence (not a pooled vector) is returned as cross-attention context. PAD
positions are excluded from attention by the key mask, so token ids under
the mask can never influence non-PAD outputs.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from figgen.corpus.tokenizer import BOS_ID, EOS_ID, PAD_ID


@dataclass
class TextEncoderConfig:
    num_layers: int = 8
    width: int = 512
    num_heads: int = 8
    l_max: int = 256
    vocab_size: int = 16384

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.width % self.num_heads != 0:
            raise ValueError(f"width {self.width} not divisible by num_heads {self.num_heads}")


def masked_attention(q, k, v, key_mask):
    """Softmax attention with keys removed where key_mask is False.

    q, k, v: BxHxLxD; key_mask: BxL booleans. Fully masked query rows
    produce a zero output instead of NaN.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    if key_mask is not None:
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
    weights = torch.nan_to_num(F.softmax(scores, dim=-1), nan=0.0)
    return weights @ v


class SelfAttention(nn.Module):
    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x, key_mask):
        b, l, w = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        split = lambda t: t.view(b, l, self.num_heads, -1).transpose(1, 2)
        out = masked_attention(split(q), split(k), split(v), key_mask)
        return self.proj(out.transpose(1, 2).reshape(b, l, w))


class EncoderBlock(nn.Module):
    def __init__(self, width: int, num_heads: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(width)
        self.attn = SelfAttention(width, num_heads)
        self.ln2 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(
            nn.Linear(width, 4 * width),
            nn.GELU(),
            nn.Linear(4 * width, width),
        )

    def forward(self, x, key_mask):
        x = x + self.attn(self.ln1(x), key_mask)
        return x + self.mlp(self.ln2(x))


class TransformerTextEncoder(nn.Module):
    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.token_emb = nn.Embedding(config.vocab_size, config.width)
        self.pos_emb = nn.Parameter(torch.zeros(config.l_max, config.width))
        nn.init.normal_(self.pos_emb, std=0.02)
        self.blocks = nn.ModuleList(
            EncoderBlock(config.width, config.num_heads) for _ in range(config.num_layers)
        )
        self.ln_out = nn.LayerNorm(config.width)

    def forward(self, token_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """BxL token ids + BxL non-PAD mask -> BxLxwidth context."""
        if token_ids.ndim != 2:
            raise ValueError(f"expected BxL token ids, got {tuple(token_ids.shape)}")
        if token_ids.shape[1] > self.config.l_max:
            raise ValueError(
                f"sequence length {token_ids.shape[1]} exceeds l_max {self.config.l_max}"
            )
        if int(token_ids.max()) >= self.config.vocab_size:
            raise ValueError("token id outside vocab_size")
        x = self.token_emb(token_ids) + self.pos_emb[: token_ids.shape[1]]
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.ln_out(x)

    def null_tokens(self, batch_size: int):
        """Token batch for the empty caption: [BOS][EOS] then PAD."""
        ids = torch.full((batch_size, self.config.l_max), PAD_ID, dtype=torch.long)
        ids[:, 0] = BOS_ID
        ids[:, 1] = EOS_ID
        mask = torch.zeros(batch_size, self.config.l_max, dtype=torch.bool)
        mask[:, :2] = True
        return ids, mask

    def null_conditioning(self, batch_size: int) -> torch.Tensor:
        """Context of the empty caption; the unconditional branch for CFG."""
        ids, mask = self.null_tokens(batch_size)
        return self.forward(ids, mask)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
