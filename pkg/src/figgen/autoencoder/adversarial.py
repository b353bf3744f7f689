"""Patch discriminator and the hinge adversarial objective."""

from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from figgen.autoencoder.model import _norm


class PatchDiscriminator(nn.Module):
    """3-layer convolutional critic emitting a grid of real/fake scores."""

    def __init__(self, in_channels: int = 3, base_channels: int = 64):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, c, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1),
            _norm(2 * c),
            nn.LeakyReLU(0.2),
            nn.Conv2d(2 * c, 4 * c, 4, stride=2, padding=1),
            _norm(4 * c),
            nn.LeakyReLU(0.2),
            nn.Conv2d(4 * c, 1, 4, stride=1, padding=1),
        )

    def forward(self, x):
        return self.net(x * 2.0 - 1.0)


def hinge_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()


def hinge_g_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    return -fake_logits.mean()


def discriminator_loss(
    discriminator: nn.Module, real: torch.Tensor, fake: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Hinge losses for both sides of the adversarial game.

    d_loss = mean(relu(1 - D(real))) + mean(relu(1 + D(fake)));
    g_loss = -mean(D(fake)).
    """
    if real.shape != fake.shape:
        raise ValueError(f"batch shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    fake_logits = discriminator(fake)
    return hinge_d_loss(discriminator(real), fake_logits), hinge_g_loss(fake_logits)


def adaptive_adversarial_weight(
    rec_loss: torch.Tensor,
    adv_loss: torch.Tensor,
    last_layer: torch.Tensor,
    eps: float = 1e-4,
    clip: float = 1e4,
) -> torch.Tensor:
    """Gradient-norm balance between reconstruction and adversarial pulls.

    ||d rec / d last_layer|| / (||d adv / d last_layer|| + eps), clipped to
    [0, clip] and detached: the weight is treated as a constant by backprop.
    """
    rec_grad = torch.autograd.grad(rec_loss, last_layer, retain_graph=True, allow_unused=True)[0]
    adv_grad = torch.autograd.grad(adv_loss, last_layer, retain_graph=True, allow_unused=True)[0]
    rec_norm = rec_grad.norm() if rec_grad is not None else rec_loss.new_zeros(())
    adv_norm = adv_grad.norm() if adv_grad is not None else adv_loss.new_zeros(())
    return (rec_norm / (adv_norm + eps)).clamp(0.0, clip).detach()
