"""KL image autoencoder: f=8 convolutional compressor with perceptual,
KL, and adversarial training losses."""

from figgen.autoencoder.adversarial import (
    PatchDiscriminator,
    adaptive_adversarial_weight,
    discriminator_loss,
)
from figgen.autoencoder.features import ConvFeatureExtractor, FeatureExtractor, perceptual_loss
from figgen.autoencoder.losses import AutoencoderLoss, kl_divergence
from figgen.autoencoder.model import AutoencoderConfig, KLAutoencoder, LatentDistribution

__all__ = [
    "AutoencoderConfig",
    "KLAutoencoder",
    "LatentDistribution",
    "FeatureExtractor",
    "ConvFeatureExtractor",
    "perceptual_loss",
    "PatchDiscriminator",
    "discriminator_loss",
    "adaptive_adversarial_weight",
    "AutoencoderLoss",
    "kl_divergence",
]
