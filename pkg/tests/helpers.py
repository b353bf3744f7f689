"""Shared test utilities: finite differences, micro configs, crafted corpora."""

from typing import Callable, List

import numpy as np
import torch

from figgen.autoencoder.model import AutoencoderConfig
from figgen.corpus.records import FigureRecord
from figgen.diffusion.unet import UNetConfig
from figgen.text_encoder import TextEncoderConfig


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params: List[torch.nn.Parameter],
    h: float = 1e-5,
    rel_tol: float = 1e-3,
    min_pass_fraction: float = 0.95,
):
    """Compare autograd gradients of loss_fn against central differences.

    Everything must be float64. Returns (pass_fraction, worst_rel_err).
    """
    for p in params:
        assert p.dtype == torch.float64, "finite differences need float64 parameters"
        if p.grad is not None:
            p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    rel_errs = []
    with torch.no_grad():
        for p, g in zip(params, analytic):
            flat = p.view(-1)
            gflat = g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                up = float(loss_fn())
                flat[i] = orig - h
                down = float(loss_fn())
                flat[i] = orig
                numeric = (up - down) / (2 * h)
                denom = max(abs(float(gflat[i])), abs(numeric), 1e-8)
                rel_errs.append(abs(float(gflat[i]) - numeric) / denom)
    rel_errs = np.array(rel_errs)
    pass_fraction = float((rel_errs <= rel_tol).mean())
    assert pass_fraction >= min_pass_fraction, (
        f"only {pass_fraction:.1%} of {rel_errs.size} coordinates within {rel_tol} "
        f"(worst {rel_errs.max():.2e})"
    )
    return pass_fraction, float(rel_errs.max())


def micro_ae_config(resolution: int = 32) -> AutoencoderConfig:
    return AutoencoderConfig(
        input_resolution=resolution,
        embed_dim=4,
        base_channels=16,
        num_res_blocks=1,
        channel_mult=(1, 1, 2, 2),
    )


def micro_unet_config(latent_size: int = 4, context_dim: int = 64) -> UNetConfig:
    return UNetConfig(
        latent_size=latent_size,
        in_channels=4,
        base_channels=32,
        num_res_blocks=2,
        attention_resolutions=(latent_size, latent_size // 2),
        channel_mult=(1, 2),
        context_dim=context_dim,
        num_heads=4,
        time_embed_dim=128,
    )


def micro_text_config(vocab_size: int = 512, l_max: int = 32) -> TextEncoderConfig:
    return TextEncoderConfig(num_layers=2, width=64, num_heads=4, l_max=l_max, vocab_size=vocab_size)


def tiny_unet_config() -> UNetConfig:
    """Sub-1k-parameter config for gradient checks.

    Attention is checked separately (a single transformer block is ~100
    params; four of them would push the full net past the 1k budget).
    """
    return UNetConfig(
        latent_size=4,
        in_channels=2,
        base_channels=2,
        num_res_blocks=1,
        attention_resolutions=(),
        channel_mult=(1,),
        context_dim=2,
        num_heads=1,
        time_embed_dim=4,
    )


def gray_record(rec_id: str, width: int, height: int, value: float = 0.5) -> FigureRecord:
    image = np.full((height, width, 3), value, dtype=np.float32)
    return FigureRecord(
        id=rec_id, image=image, caption=f"gray test figure {rec_id}",
        source_width=width, source_height=height,
    )
