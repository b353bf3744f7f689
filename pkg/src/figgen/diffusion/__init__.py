"""Latent-space denoising diffusion: schedule, conditional U-Net,
training loss, and the DDIM sampler with classifier-free guidance."""

from figgen.diffusion.sampler import SamplerConfig, cfg_combine, ddim_step, ddim_timesteps
from figgen.diffusion.schedule import NoiseSchedule, build_schedule, predict_x0, q_sample
from figgen.diffusion.training import diffusion_training_loss
from figgen.diffusion.unet import ConditionalUNet, UNetConfig

__all__ = [
    "NoiseSchedule",
    "build_schedule",
    "q_sample",
    "predict_x0",
    "UNetConfig",
    "ConditionalUNet",
    "SamplerConfig",
    "cfg_combine",
    "ddim_step",
    "ddim_timesteps",
    "diffusion_training_loss",
]
