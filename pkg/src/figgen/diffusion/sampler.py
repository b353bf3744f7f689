"""DDIM stepping, the timestep ladder, and classifier-free guidance."""

import math
from dataclasses import dataclass
from typing import List, Optional

import torch

from figgen.diffusion.schedule import NoiseSchedule


@dataclass
class SamplerConfig:
    num_steps: int = 200
    eta: float = 0.0
    cfg_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.cfg_scale < 0:
            raise ValueError("cfg_scale must be >= 0")


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, scale: float) -> torch.Tensor:
    """eps_uncond + scale * (eps_cond - eps_uncond); scale 1 is pure conditional.

    The endpoint scales return their branch unchanged, keeping the s=0 and
    s=1 identities exact rather than within rounding error.
    """
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(
            f"shape mismatch: {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}"
        )
    if scale < 0:
        raise ValueError("guidance scale must be >= 0")
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def ddim_timesteps(total_steps: int, num_steps: int) -> List[int]:
    """Uniform-stride descending ladder ending near 0.

    total_steps=1000, num_steps=200 gives [999, 994, ..., 4].
    """
    if not (1 <= num_steps <= total_steps):
        raise ValueError(f"num_steps must be in [1, {total_steps}], got {num_steps}")
    stride = total_steps // num_steps
    return [total_steps - 1 - i * stride for i in range(num_steps)]


def ddim_step(
    x_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    t_prev: int,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    noise: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """One reverse step x_t -> x_{t_prev}; t_prev = -1 is the clean endpoint.

    Deterministic at eta = 0. For eta > 0 the DDIM variance sigma_t is used
    and `noise` must be supplied (standard normal, shaped like x_t).
    """
    if t <= t_prev:
        raise ValueError(f"need t > t_prev, got t={t}, t_prev={t_prev}")
    if t_prev < -1:
        raise ValueError(f"t_prev must be >= -1, got {t_prev}")
    abar_t = float(schedule.alpha_bar(t))
    abar_prev = float(schedule.alpha_bar(t_prev))

    x0_hat = (x_t - math.sqrt(1.0 - abar_t) * eps_hat) / math.sqrt(abar_t)

    sigma = 0.0
    if eta > 0 and abar_prev < 1.0:
        sigma = (
            eta
            * math.sqrt((1.0 - abar_prev) / (1.0 - abar_t))
            * math.sqrt(1.0 - abar_t / abar_prev)
        )
    direction = math.sqrt(max(1.0 - abar_prev - sigma**2, 0.0)) * eps_hat
    x_prev = math.sqrt(abar_prev) * x0_hat + direction
    if sigma > 0:
        if noise is None:
            raise ValueError("eta > 0 requires a noise tensor")
        x_prev = x_prev + sigma * noise
    return x_prev
