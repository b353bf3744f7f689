"""Optimization loops and logging for both training stages.

Effective batch size = micro_batch_size x gradient accumulation. Per-step
randomness (batch choice, reparameterization noise, timesteps, conditioning
dropout) is derived statelessly from (seed, step), so a resumed run
reproduces the uninterrupted one bit-exactly.
"""

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch
from torch.nn.utils import clip_grad_norm_

from figgen import checkpoints
from figgen.autoencoder.adversarial import PatchDiscriminator, hinge_d_loss
from figgen.autoencoder.features import default_ocr_style, default_vgg_style
from figgen.autoencoder.losses import AutoencoderLoss
from figgen.autoencoder.model import AutoencoderConfig, KLAutoencoder, LatentDistribution
from figgen.corpus.prepare import PreparedDataset
from figgen.diffusion.schedule import build_schedule
from figgen.diffusion.training import diffusion_training_loss
from figgen.diffusion.unet import ConditionalUNet, UNetConfig
from figgen.seeding import step_rng, torch_generator
from figgen.text_encoder import TextEncoderConfig, TransformerTextEncoder

LOG_NAME = "train_log.jsonl"
FINAL_CHECKPOINT = "checkpoint_final.pt"

AE_EXTRACTOR_SEEDS = (101, 202)


class TrainingAborted(RuntimeError):
    """Raised on a non-finite loss; the last good checkpoint stays on disk."""


@dataclass
class TrainConfig:
    stage: str
    batch_size: int
    learning_rate: float
    micro_batch_size: Optional[int] = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_steps: int = 0
    max_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 1000
    grad_clip: float = 0.0
    p_uncond: float = 0.1
    latent_mode: str = "sample"  # "sample" draws from the posterior, "mean" uses its mode

    @classmethod
    def for_stage(cls, stage: str) -> "TrainConfig":
        if stage == "autoencoder":
            return cls(stage=stage, batch_size=4, learning_rate=4.5e-6, warmup_steps=50_000)
        if stage == "diffusion":
            return cls(stage=stage, batch_size=32, learning_rate=1e-4)
        raise ValueError(f"unknown stage {stage!r}")

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        micro = self.micro_batch_size
        if micro is not None and (micro < 1 or self.batch_size % micro != 0):
            raise ValueError(
                f"micro_batch_size {micro} must divide batch_size {self.batch_size}"
            )
        if self.warmup_steps < 0 or self.max_steps < 1 or self.checkpoint_every < 1:
            raise ValueError("warmup_steps >= 0, max_steps >= 1, checkpoint_every >= 1 required")
        if not 0.0 <= self.p_uncond <= 1.0:
            raise ValueError("p_uncond must be in [0, 1]")
        if self.latent_mode not in ("sample", "mean"):
            raise ValueError(f"latent_mode must be 'sample' or 'mean', got {self.latent_mode!r}")

    def micro_batches(self) -> Tuple[int, int]:
        micro = self.micro_batch_size or self.batch_size
        return micro, self.batch_size // micro


class TrainLog:
    """JSON-Lines log: one record per step with every configured loss term."""

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a" if append else "w", encoding="utf-8")

    def write(self, step: int, loss_terms: Dict[str, float], grad_norm: float, wallclock: float):
        record = {
            "step": step,
            "loss_terms": loss_terms,
            "grad_norm": grad_norm,
            "wallclock": wallclock,
        }
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()


def read_log(path) -> List[Dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]


def _batch_indices(rng, n: int, batch: int):
    return rng.choice(n, size=batch, replace=n < batch).tolist()


def _grad_norm(params, clip: float) -> float:
    max_norm = clip if clip > 0 else math.inf
    return float(clip_grad_norm_(params, max_norm))


def _check_finite(value: float, step: int) -> None:
    if not math.isfinite(value):
        raise TrainingAborted(f"non-finite loss at step {step}")


def train_autoencoder(
    config: TrainConfig,
    ae_config: AutoencoderConfig,
    dataset: PreparedDataset,
    out_dir,
    resume_from=None,
) -> Path:
    """First stage: reconstruction + perceptual + KL, adversarial after warmup."""
    config.validate()
    ae_config.validate()
    if len(dataset) == 0:
        raise ValueError("prepared dataset is empty")
    side = dataset.sample(0).image.shape[0]
    if side != ae_config.input_resolution:
        raise ValueError(
            f"dataset resolution {side} != configured input_resolution {ae_config.input_resolution}"
        )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    model = KLAutoencoder(ae_config)
    discriminator = PatchDiscriminator(base_channels=max(8, ae_config.base_channels // 2))
    vgg = default_vgg_style(AE_EXTRACTOR_SEEDS[0])
    ocr = default_ocr_style(AE_EXTRACTOR_SEEDS[1])
    loss_mod = AutoencoderLoss(ae_config, vgg, ocr, discriminator)

    betas = (config.adam_beta1, config.adam_beta2)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate, betas=betas, eps=config.adam_eps)
    disc_optimizer = torch.optim.Adam(
        discriminator.parameters(), lr=config.learning_rate, betas=betas, eps=config.adam_eps
    )

    start_step = 0
    if resume_from is not None:
        payload = checkpoints.load_autoencoder_checkpoint(resume_from)
        if checkpoints.autoencoder_config_from_dict(payload["config"]) != ae_config:
            raise checkpoints.CheckpointError("checkpoint config does not match requested config")
        model.load_state_dict(payload["model"])
        discriminator.load_state_dict(payload["discriminator"])
        optimizer.load_state_dict(payload["optimizer"])
        disc_optimizer.load_state_dict(payload["disc_optimizer"])
        start_step = payload["step"]

    micro, accum = config.micro_batches()
    log = TrainLog(out_dir / LOG_NAME, append=resume_from is not None)
    t_start = time.monotonic()

    def save(step):
        checkpoints.save_autoencoder_checkpoint(
            out_dir / f"checkpoint_step{step:07d}.pt",
            ae_config, model, discriminator, optimizer, disc_optimizer, step, AE_EXTRACTOR_SEEDS,
        )

    for step in range(start_step, config.max_steps):
        rng = step_rng(config.seed, step, "ae")
        indices = _batch_indices(rng, len(dataset), config.batch_size)

        optimizer.zero_grad(set_to_none=True)
        terms_acc: Dict[str, float] = {}
        reals, fakes = [], []
        for m in range(accum):
            micro_idx = indices[m * micro : (m + 1) * micro]
            x = dataset.image_batch(micro_idx)
            recon, dist = model(x, generator=torch_generator(rng))
            total, terms = loss_mod.total_loss(
                x, recon, dist, step, config.warmup_steps, last_layer=model.last_layer
            )
            (total / accum).backward()
            reals.append(x)
            fakes.append(recon.detach())
            for k, v in terms.items():
                terms_acc[k] = terms_acc.get(k, 0.0) + v / accum

        _check_finite(terms_acc["total"], step)
        grad_norm = _grad_norm(model.parameters(), config.grad_clip)
        optimizer.step()

        disc_optimizer.zero_grad(set_to_none=True)
        d_total = 0.0
        for x, fake in zip(reals, fakes):
            d_loss = hinge_d_loss(discriminator(x), discriminator(fake))
            if step >= config.warmup_steps:
                (d_loss / accum).backward()
            d_total += float(d_loss.detach()) / accum
        if step >= config.warmup_steps:
            _check_finite(d_total, step)
            disc_optimizer.step()
        terms_acc["disc_hinge"] = d_total

        log.write(step, terms_acc, grad_norm, time.monotonic() - t_start)
        if (step + 1) % config.checkpoint_every == 0 and step + 1 < config.max_steps:
            save(step + 1)

    final = out_dir / FINAL_CHECKPOINT
    checkpoints.save_autoencoder_checkpoint(
        final, ae_config, model, discriminator, optimizer, disc_optimizer, config.max_steps,
        AE_EXTRACTOR_SEEDS,
    )
    log.close()
    return final


def _check_compatibility(ae: KLAutoencoder, unet_config: UNetConfig, dataset_side: int) -> None:
    problems = []
    f = ae.config.downsample_factor
    latent_side = dataset_side // f
    if dataset_side % f != 0:
        problems.append(f"dataset resolution {dataset_side} not divisible by autoencoder factor f={f}")
    if latent_side != unet_config.latent_size:
        problems.append(
            f"unet latent_size {unet_config.latent_size} != dataset {dataset_side} / f={f} = {latent_side}"
        )
    if ae.config.embed_dim != unet_config.in_channels:
        problems.append(
            f"unet in_channels {unet_config.in_channels} != autoencoder embed_dim {ae.config.embed_dim}"
        )
    if problems:
        raise ValueError("incompatible autoencoder checkpoint: " + "; ".join(problems))


def train_diffusion(
    config: TrainConfig,
    dataset: PreparedDataset,
    ae_checkpoint,
    unet_config: UNetConfig,
    text_config: TextEncoderConfig,
    out_dir,
    schedule_num_steps: int = 1000,
    beta_start: float = 8.5e-5,
    beta_end: float = 1.2e-2,
    resume_from=None,
) -> Path:
    """Second stage: joint U-Net + text-encoder training over frozen latents."""
    config.validate()
    unet_config.validate()
    text_config.validate()
    if len(dataset) == 0:
        raise ValueError("prepared dataset is empty")
    if dataset.tokenizer.vocab_size > text_config.vocab_size:
        raise ValueError(
            f"tokenizer vocab {dataset.tokenizer.vocab_size} exceeds text_encoder vocab_size "
            f"{text_config.vocab_size}"
        )
    if dataset.tokenizer.l_max > text_config.l_max:
        raise ValueError(
            f"tokenizer l_max {dataset.tokenizer.l_max} exceeds text_encoder l_max {text_config.l_max}"
        )

    autoencoder, ae_payload = checkpoints.load_autoencoder_model(ae_checkpoint)
    side = dataset.sample(0).image.shape[0]
    _check_compatibility(autoencoder, unet_config, side)
    autoencoder.eval()
    for p in autoencoder.parameters():
        p.requires_grad_(False)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    unet = ConditionalUNet(unet_config)
    text_encoder = TransformerTextEncoder(text_config)
    params = list(unet.parameters()) + list(text_encoder.parameters())
    optimizer = torch.optim.Adam(
        params,
        lr=config.learning_rate,
        betas=(config.adam_beta1, config.adam_beta2),
        eps=config.adam_eps,
    )
    schedule = build_schedule(schedule_num_steps, beta_start, beta_end)

    start_step = 0
    if resume_from is not None:
        payload = checkpoints.load_diffusion_checkpoint(resume_from)
        unet.load_state_dict(payload["unet"])
        text_encoder.load_state_dict(payload["text_encoder"])
        optimizer.load_state_dict(payload["optimizer"])
        start_step = payload["step"]
        latent_scale = payload["latent_scale"]
    else:
        # Latent scaling frozen from the first batch: unit-variance latents
        # keep the N(0, I) prior consistent.
        rng0 = step_rng(config.seed, 0, "latent-scale")
        probe_idx = _batch_indices(rng0, len(dataset), min(config.batch_size, len(dataset)))
        with torch.no_grad():
            dist0 = autoencoder.encode(dataset.image_batch(probe_idx))
            probe = (
                dist0.sample(generator=torch_generator(rng0))
                if config.latent_mode == "sample"
                else dist0.mean
            )
        latent_scale = float(1.0 / probe.std())

    print(
        f"[figgen] diffusion stage: unet params {unet.parameter_count():,}, "
        f"text encoder params {text_encoder.parameter_count():,}, latent scale {latent_scale:.4f}"
    )

    micro, accum = config.micro_batches()
    log = TrainLog(out_dir / LOG_NAME, append=resume_from is not None)
    t_start = time.monotonic()

    # The frozen encoder is deterministic, so posterior moments per record
    # can be cached; sampling still draws fresh noise every step.
    moment_cache: Dict[int, Tuple[torch.Tensor, torch.Tensor]] = {}

    def batch_distribution(micro_idx):
        missing = [i for i in micro_idx if i not in moment_cache]
        if missing:
            with torch.no_grad():
                dist = autoencoder.encode(dataset.image_batch(missing))
            for j, i in enumerate(missing):
                moment_cache[i] = (dist.mean[j], dist.logvar[j])
        mean = torch.stack([moment_cache[i][0] for i in micro_idx])
        logvar = torch.stack([moment_cache[i][1] for i in micro_idx])
        return LatentDistribution(mean, logvar)

    def save(path, step):
        checkpoints.save_diffusion_checkpoint(
            path, unet_config, text_config, schedule, latent_scale, unet, text_encoder,
            optimizer, step, dataset.tokenizer.to_json(),
            autoencoder.config, autoencoder.state_dict(),
        )

    for step in range(start_step, config.max_steps):
        rng = step_rng(config.seed, step, "ldm")
        indices = _batch_indices(rng, len(dataset), config.batch_size)

        optimizer.zero_grad(set_to_none=True)
        loss_acc = 0.0
        n_uncond = 0
        for m in range(accum):
            micro_idx = indices[m * micro : (m + 1) * micro]
            gen = torch_generator(rng)
            with torch.no_grad():
                dist = batch_distribution(micro_idx)
                z0 = dist.sample(generator=gen) if config.latent_mode == "sample" else dist.mean
                z = z0 * latent_scale
            ids, mask = dataset.token_batch(micro_idx)
            context = text_encoder(ids, mask)
            null_context = text_encoder.null_conditioning(1)
            _, null_mask = text_encoder.null_tokens(1)
            loss, info = diffusion_training_loss(
                unet, schedule, z, context, mask, null_context, null_mask,
                p_uncond=config.p_uncond, generator=gen,
            )
            (loss / accum).backward()
            loss_acc += float(loss.detach()) / accum
            n_uncond += info["num_unconditional"]

        _check_finite(loss_acc, step)
        grad_norm = _grad_norm(params, config.grad_clip)
        optimizer.step()

        log.write(
            step,
            {"mse": loss_acc, "num_unconditional": float(n_uncond)},
            grad_norm,
            time.monotonic() - t_start,
        )
        if (step + 1) % config.checkpoint_every == 0 and step + 1 < config.max_steps:
            save(out_dir / f"checkpoint_step{step + 1:07d}.pt", step + 1)

    final = out_dir / FINAL_CHECKPOINT
    save(final, config.max_steps)
    log.close()
    return final


def resume(checkpoint_path, config: TrainConfig, dataset: PreparedDataset, out_dir, **kwargs) -> Path:
    """Continue a run from a checkpoint; dispatches on the archive magic."""
    try:
        payload = torch.load(checkpoint_path, map_location="cpu", weights_only=True)
        magic = payload.get("magic")
    except Exception as exc:
        raise checkpoints.CheckpointError(f"cannot read checkpoint {checkpoint_path}: {exc}") from exc

    if magic == checkpoints.AE_MAGIC:
        ae_config = checkpoints.autoencoder_config_from_dict(payload["config"])
        return train_autoencoder(config, ae_config, dataset, out_dir, resume_from=checkpoint_path)
    if magic == checkpoints.LDM_MAGIC:
        unet_config = checkpoints.unet_config_from_dict(payload["unet_config"])
        text_config = TextEncoderConfig(**payload["text_config"])
        sched = payload["schedule"]
        ae_ckpt = kwargs.get("ae_checkpoint")
        if ae_ckpt is None:
            raise ValueError("resuming the diffusion stage needs ae_checkpoint")
        return train_diffusion(
            config, dataset, ae_ckpt, unet_config, text_config, out_dir,
            schedule_num_steps=sched["num_steps"], beta_start=sched["beta_start"],
            beta_end=sched["beta_end"], resume_from=checkpoint_path,
        )
    raise checkpoints.CheckpointError(f"unknown checkpoint magic {magic!r}")
