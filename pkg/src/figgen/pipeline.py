"""End-to-end caption-to-image sampling over trained components."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from figgen import imageio
from figgen.autoencoder.model import KLAutoencoder
from figgen.corpus.tokenizer import SubwordTokenizer
from figgen.diffusion.sampler import SamplerConfig, cfg_combine, ddim_step, ddim_timesteps
from figgen.diffusion.schedule import NoiseSchedule
from figgen.diffusion.unet import ConditionalUNet
from figgen.seeding import seeded_generator
from figgen.text_encoder import TransformerTextEncoder


@dataclass
class GenerationPipeline:
    """Frozen parameter snapshot; sampling is pure and safe to run concurrently."""

    autoencoder: KLAutoencoder
    text_encoder: TransformerTextEncoder
    unet: ConditionalUNet
    tokenizer: SubwordTokenizer
    schedule: NoiseSchedule
    latent_scale: float

    def __post_init__(self):
        self.autoencoder.eval()
        self.text_encoder.eval()
        self.unet.eval()

    def encode_captions(self, captions: List[str]) -> Tuple[torch.Tensor, torch.Tensor]:
        pairs = [self.tokenizer.encode(c, l_max=self.text_encoder.config.l_max) for c in captions]
        ids = torch.tensor([p[0] for p in pairs], dtype=torch.long)
        mask = torch.tensor([p[1] for p in pairs], dtype=torch.bool)
        return self.text_encoder(ids, mask), mask

    @torch.no_grad()
    def sample_latents(
        self, captions: List[str], config: SamplerConfig, stats: Optional[Dict] = None
    ) -> torch.Tensor:
        """DDIM ladder with classifier-free guidance; one latent per caption."""
        config.validate()
        n = len(captions)
        context, context_mask = self.encode_captions(captions)
        null_context = self.text_encoder.null_conditioning(1).expand(n, -1, -1)
        null_ids, null_mask_row = self.text_encoder.null_tokens(1)
        null_mask = null_mask_row.expand(n, -1)

        size = self.unet.config.latent_size
        channels = self.unet.config.in_channels
        generators = [seeded_generator(config.seed, i, "sample-init") for i in range(n)]
        x = torch.stack(
            [torch.randn(channels, size, size, generator=g) for g in generators], dim=0
        )

        ladder = ddim_timesteps(self.schedule.num_steps, config.num_steps)
        needs_uncond = config.cfg_scale != 1.0
        for i, t in enumerate(ladder):
            t_prev = ladder[i + 1] if i + 1 < len(ladder) else -1
            eps_cond = self.unet(x, t, context, context_mask)
            if stats is not None:
                stats["unet_calls"] = stats.get("unet_calls", 0) + 1
            if needs_uncond:
                eps_uncond = self.unet(x, t, null_context, null_mask)
                if stats is not None:
                    stats["unet_calls"] += 1
                eps = cfg_combine(eps_uncond, eps_cond, config.cfg_scale)
            else:
                eps = eps_cond
            noise = None
            if config.eta > 0:
                noise = torch.stack(
                    [torch.randn(channels, size, size, generator=g) for g in generators], dim=0
                )
            x = ddim_step(x, eps, t, t_prev, self.schedule, eta=config.eta, noise=noise)
        return x

    @torch.no_grad()
    def sample_images(
        self, captions: List[str], config: SamplerConfig, stats: Optional[Dict] = None
    ) -> List[np.ndarray]:
        """Sample latents, undo the latent scaling, decode to [0,1] images."""
        latents = self.sample_latents(captions, config, stats=stats)
        decoded = self.autoencoder.decode(latents / self.latent_scale)
        return [imageio.to_array(decoded[i]) for i in range(decoded.shape[0])]
