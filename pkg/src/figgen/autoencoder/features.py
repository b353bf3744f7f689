"""Frozen feature extractors for perceptual losses and evaluation.

The desk-scale default is a seeded, randomly initialized conv stack; the
glyph-oriented variant runs on high-pass-filtered input so stroke edges
dominate. Externally trained weights can be plugged in through the usual
state_dict path; the identity string keeps scores from being compared
across different extractors.
"""

import hashlib
from typing import List, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F


class FeatureExtractor(nn.Module):
    """Contract: frozen, deterministic, ordered feature maps with weights.

    Subclasses implement `extract`; parameters never receive gradients.
    """

    def __init__(self, layer_weights: Sequence[float], identity: str):
        super().__init__()
        if any(w < 0 for w in layer_weights):
            raise ValueError("layer weights must be >= 0")
        self.layer_weights = list(layer_weights)
        self.identity = identity

    def extract(self, images: torch.Tensor) -> List[torch.Tensor]:
        raise NotImplementedError

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        return self.extract(images)


def _high_pass(x: torch.Tensor) -> torch.Tensor:
    blur = F.avg_pool2d(x, kernel_size=5, stride=1, padding=2, count_include_pad=False)
    return x - blur


class ConvFeatureExtractor(FeatureExtractor):
    """Seeded random conv stack; one feature map per stage."""

    def __init__(
        self,
        seed: int,
        widths: Sequence[int] = (32, 64, 128, 256),
        in_channels: int = 3,
        high_pass: bool = False,
        layer_weights: Sequence[float] | None = None,
        name: str = "conv-stack",
    ):
        weights = [1.0] * len(widths) if layer_weights is None else list(layer_weights)
        if len(weights) != len(widths):
            raise ValueError("need one layer weight per stage")
        super().__init__(weights, identity="")
        self.high_pass = high_pass
        self.seed = seed

        gen = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        ch = in_channels
        for width in widths:
            conv = nn.Conv2d(ch, width, 3, stride=2, padding=1)
            fan_in = ch * 9
            conv.weight.data = torch.randn(conv.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5
            conv.bias.data.zero_()
            self.stages.append(conv)
            ch = width
        self.freeze()

        digest = hashlib.sha256()
        for p in self.parameters():
            digest.update(p.detach().numpy().tobytes())
        self.identity = (
            f"{name}(seed={seed}, widths={tuple(widths)}, high_pass={high_pass}, "
            f"hash={digest.hexdigest()[:8]})"
        )

    def extract(self, images: torch.Tensor) -> List[torch.Tensor]:
        h = _high_pass(images) if self.high_pass else images
        features = []
        for conv in self.stages:
            h = F.leaky_relu(conv(h), 0.2)
            features.append(h)
        return features


def default_vgg_style(seed: int = 101) -> ConvFeatureExtractor:
    return ConvFeatureExtractor(seed=seed, name="vgg-style")


def default_ocr_style(seed: int = 202) -> ConvFeatureExtractor:
    return ConvFeatureExtractor(seed=seed, high_pass=True, name="ocr-style")


def perceptual_loss(extractor: FeatureExtractor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Weighted sum over layers of the mean squared feature difference."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    feats_a = extractor.extract(a)
    feats_b = extractor.extract(b)
    total = a.new_zeros(())
    for w, fa, fb in zip(extractor.layer_weights, feats_a, feats_b):
        total = total + w * F.mse_loss(fa, fb)
    return total


def feature_rms_distance(extractor: FeatureExtractor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Weighted sum over layers of the root-mean-square feature difference.

    The un-squared companion of `perceptual_loss`; used by the OCR-SIM metric.
    """
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    feats_a = extractor.extract(a)
    feats_b = extractor.extract(b)
    total = a.new_zeros(())
    for w, fa, fb in zip(extractor.layer_weights, feats_a, feats_b):
        total = total + w * torch.sqrt(F.mse_loss(fa, fb))
    return total
