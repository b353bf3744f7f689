"""Noise-prediction training objective with conditioning dropout."""

from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from figgen.diffusion.schedule import NoiseSchedule, q_sample


def diffusion_training_loss(
    unet,
    schedule: NoiseSchedule,
    x0: torch.Tensor,
    context: torch.Tensor,
    context_mask: torch.Tensor,
    null_context: torch.Tensor,
    null_mask: torch.Tensor,
    p_uncond: float = 0.1,
    generator: Optional[torch.Generator] = None,
    timesteps: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, Dict[str, float]]:
    """MSE between injected and predicted noise, E||eps - eps_hat||^2.

    Each sample's context is replaced by the null (empty-caption) context
    with probability p_uncond, which trains the unconditional branch used
    by classifier-free guidance. `timesteps` and `noise` are drawn from
    `generator` when not supplied (fixing them makes the loss a
    deterministic function of the parameters, e.g. for gradient checks).
    """
    b = x0.shape[0]
    if timesteps is None:
        timesteps = torch.randint(0, schedule.num_steps, (b,), generator=generator)
    if noise is None:
        noise = torch.randn(x0.shape, generator=generator, dtype=x0.dtype)

    if p_uncond > 0:
        drop = torch.rand(b, generator=generator) < p_uncond
    else:
        drop = torch.zeros(b, dtype=torch.bool)
    if drop.any():
        null_ctx = null_context.expand(b, -1, -1)
        null_msk = null_mask.expand(b, -1)
        sel = drop.view(b, 1, 1)
        context = torch.where(sel, null_ctx, context)
        context_mask = torch.where(drop.view(b, 1), null_msk, context_mask)

    x_t = q_sample(x0, timesteps, noise, schedule)
    eps_hat = unet(x_t, timesteps, context, context_mask)
    loss = F.mse_loss(eps_hat, noise)
    info = {"num_unconditional": int(drop.sum())}
    return loss, info
