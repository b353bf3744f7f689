"""Combined autoencoder training objective."""

from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from figgen.autoencoder.adversarial import adaptive_adversarial_weight, hinge_g_loss
from figgen.autoencoder.features import FeatureExtractor, perceptual_loss
from figgen.autoencoder.model import AutoencoderConfig, LatentDistribution


def kl_divergence(dist: LatentDistribution) -> torch.Tensor:
    """Mean over latent positions of KL(q || N(0, I)) per dimension.

    0.5 * (mu^2 + sigma^2 - 1 - log sigma^2), averaged over every element.
    """
    var = torch.exp(dist.logvar)
    return 0.5 * torch.mean(dist.mean.pow(2) + var - 1.0 - dist.logvar)


class AutoencoderLoss(nn.Module):
    """L1 + perceptual (vgg/ocr style) + KL + gated adaptive adversarial term.

    The adversarial term enters only past `warmup_steps`, scaled by
    disc_weight times the gradient-balance factor. The breakdown reports
    every term unweighted plus the effective adversarial weight.
    """

    TERMS = ("rec_l1", "perceptual_vgg", "perceptual_ocr", "kl", "adversarial", "adv_weight", "total")

    def __init__(
        self,
        config: AutoencoderConfig,
        vgg_extractor: FeatureExtractor,
        ocr_extractor: FeatureExtractor,
        discriminator: nn.Module,
    ):
        super().__init__()
        self.config = config
        self.vgg_extractor = vgg_extractor
        self.ocr_extractor = ocr_extractor
        self.discriminator = discriminator

    def total_loss(
        self,
        x: torch.Tensor,
        x_hat: torch.Tensor,
        dist: LatentDistribution,
        step: int,
        warmup_steps: int,
        last_layer: Optional[torch.Tensor] = None,
        adaptive_weight: Optional[float] = None,
    ) -> Tuple[torch.Tensor, Dict[str, float]]:
        if warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        cfg = self.config

        rec = F.l1_loss(x_hat, x)
        vgg = perceptual_loss(self.vgg_extractor, x_hat, x)
        ocr = perceptual_loss(self.ocr_extractor, x_hat, x)
        kl = kl_divergence(dist)
        adv = hinge_g_loss(self.discriminator(x_hat))

        rec_bundle = rec + cfg.vgg_weight * vgg + cfg.ocr_weight * ocr
        total = rec_bundle + cfg.kl_weight * kl

        gate = 0.0 if step < warmup_steps else 1.0
        weight = 0.0
        if gate > 0.0 and cfg.disc_weight > 0.0:
            if adaptive_weight is not None:
                lam = torch.as_tensor(float(adaptive_weight))
            else:
                if last_layer is None:
                    raise ValueError("adaptive adversarial weight needs last_layer (or pass adaptive_weight)")
                lam = adaptive_adversarial_weight(rec_bundle, adv, last_layer)
            weight = gate * cfg.disc_weight * float(lam)
            total = total + weight * adv

        breakdown = {
            "rec_l1": float(rec.detach()),
            "perceptual_vgg": float(vgg.detach()),
            "perceptual_ocr": float(ocr.detach()),
            "kl": float(kl.detach()),
            "adversarial": float(adv.detach()),
            "adv_weight": weight,
            "total": float(total.detach()),
        }
        return total, breakdown
