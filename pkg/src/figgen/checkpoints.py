"""Versioned checkpoint archives for both training stages.

A diffusion checkpoint embeds the frozen autoencoder and the tokenizer so
a single file is enough to sample from.
"""

from dataclasses import asdict
from pathlib import Path
from typing import Dict, Tuple

import torch

import figgen
from figgen.autoencoder.model import AutoencoderConfig, KLAutoencoder
from figgen.corpus.tokenizer import SubwordTokenizer
from figgen.diffusion.schedule import NoiseSchedule, build_schedule
from figgen.diffusion.unet import ConditionalUNet, UNetConfig
from figgen.pipeline import GenerationPipeline
from figgen.text_encoder import TextEncoderConfig, TransformerTextEncoder

AE_MAGIC = "FIGGEN-AE-v1"
LDM_MAGIC = "FIGGEN-LDM-v1"


class CheckpointError(RuntimeError):
    pass


def _load_raw(path, expected_magic: str) -> Dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"corrupt or unreadable checkpoint {path}: {exc}") from exc
    magic = payload.get("magic") if isinstance(payload, dict) else None
    if magic != expected_magic:
        raise CheckpointError(f"{path}: magic {magic!r} does not match {expected_magic!r}")
    return payload


def save_autoencoder_checkpoint(
    path,
    config: AutoencoderConfig,
    model: KLAutoencoder,
    discriminator,
    optimizer,
    disc_optimizer,
    step: int,
    extractor_seeds: Tuple[int, int],
) -> None:
    payload = {
        "magic": AE_MAGIC,
        "version": figgen.__version__,
        "config": asdict(config),
        "model": model.state_dict(),
        "discriminator": discriminator.state_dict(),
        "optimizer": optimizer.state_dict(),
        "disc_optimizer": disc_optimizer.state_dict(),
        "step": step,
        "extractor_seeds": tuple(extractor_seeds),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_autoencoder_checkpoint(path) -> Dict:
    return _load_raw(path, AE_MAGIC)


def autoencoder_config_from_dict(d: Dict) -> AutoencoderConfig:
    d = dict(d)
    d["channel_mult"] = tuple(d["channel_mult"])
    return AutoencoderConfig(**d)


def load_autoencoder_model(path) -> Tuple[KLAutoencoder, Dict]:
    payload = load_autoencoder_checkpoint(path)
    config = autoencoder_config_from_dict(payload["config"])
    model = KLAutoencoder(config)
    model.load_state_dict(payload["model"])
    return model, payload


def save_diffusion_checkpoint(
    path,
    unet_config: UNetConfig,
    text_config: TextEncoderConfig,
    schedule: NoiseSchedule,
    latent_scale: float,
    unet: ConditionalUNet,
    text_encoder: TransformerTextEncoder,
    optimizer,
    step: int,
    tokenizer_json: str,
    ae_config: AutoencoderConfig,
    ae_state: Dict,
) -> None:
    payload = {
        "magic": LDM_MAGIC,
        "version": figgen.__version__,
        "unet_config": asdict(unet_config),
        "text_config": asdict(text_config),
        "schedule": {
            "num_steps": schedule.num_steps,
            "beta_start": schedule.beta_start,
            "beta_end": schedule.beta_end,
        },
        "latent_scale": float(latent_scale),
        "unet": unet.state_dict(),
        "text_encoder": text_encoder.state_dict(),
        "optimizer": optimizer.state_dict(),
        "step": step,
        "tokenizer": tokenizer_json,
        "ae_config": asdict(ae_config),
        "ae_model": ae_state,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_diffusion_checkpoint(path) -> Dict:
    return _load_raw(path, LDM_MAGIC)


def unet_config_from_dict(d: Dict) -> UNetConfig:
    d = dict(d)
    d["attention_resolutions"] = tuple(d["attention_resolutions"])
    d["channel_mult"] = tuple(d["channel_mult"])
    return UNetConfig(**d)


def load_pipeline(path) -> GenerationPipeline:
    """Rebuild a complete sampling pipeline from one diffusion checkpoint."""
    payload = load_diffusion_checkpoint(path)
    ae_config = autoencoder_config_from_dict(payload["ae_config"])
    autoencoder = KLAutoencoder(ae_config)
    autoencoder.load_state_dict(payload["ae_model"])

    text_config = TextEncoderConfig(**payload["text_config"])
    text_encoder = TransformerTextEncoder(text_config)
    text_encoder.load_state_dict(payload["text_encoder"])

    unet_config = unet_config_from_dict(payload["unet_config"])
    unet = ConditionalUNet(unet_config)
    unet.load_state_dict(payload["unet"])

    tokenizer = SubwordTokenizer.from_json(payload["tokenizer"])
    schedule = build_schedule(**payload["schedule"])
    return GenerationPipeline(
        autoencoder=autoencoder,
        text_encoder=text_encoder,
        unet=unet,
        tokenizer=tokenizer,
        schedule=schedule,
        latent_scale=payload["latent_scale"],
    )
