"""Session fixtures: deterministic mode plus the shared overfit pipeline.

The expensive chain (64-sample corpus -> 500-step micro autoencoder ->
1000-step 8-sample diffusion overfit) is built once per session and reused
by the trainer, sampler, and acceptance tests.
"""

import os

os.environ.setdefault("FIGGEN_DETERMINISTIC", "1")

import pytest
import torch

from figgen.seeding import configure_determinism

configure_determinism()

from figgen.autoencoder import AutoencoderConfig  # noqa: E402
from figgen.checkpoints import load_pipeline  # noqa: E402
from figgen.corpus import load_manifest, prepare_dataset, synthesize_corpus, write_corpus  # noqa: E402
from figgen.corpus.prepare import PreparedDataset  # noqa: E402
from figgen.text_encoder import TextEncoderConfig  # noqa: E402
from figgen.trainer import TrainConfig, read_log, train_autoencoder, train_diffusion  # noqa: E402

from helpers import micro_ae_config, micro_text_config, micro_unet_config  # noqa: E402

CORPUS_SEED = 11
TEST_RESOLUTION = 32


@pytest.fixture(scope="session")
def corpus_records():
    return synthesize_corpus(64, seed=CORPUS_SEED)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, corpus_records):
    root = tmp_path_factory.mktemp("corpus64")
    write_corpus(corpus_records, root)
    return root


@pytest.fixture(scope="session")
def prepared64(tmp_path_factory, corpus_dir):
    root = tmp_path_factory.mktemp("prep64")
    prepare_dataset(
        load_manifest(corpus_dir / "manifest.jsonl"), root,
        resolution=TEST_RESOLUTION, vocab_size=512, l_max=32, val_fraction=0.2, seed=0,
    )
    return root


@pytest.fixture(scope="session")
def prepared8(tmp_path_factory, corpus_records):
    """First 8 records as a standalone overfit dataset."""
    root = tmp_path_factory.mktemp("prep8")
    corpus = root / "corpus"
    write_corpus(corpus_records[:8], corpus)
    prep = root / "prepared"
    prepare_dataset(
        load_manifest(corpus / "manifest.jsonl"), prep,
        resolution=TEST_RESOLUTION, vocab_size=512, l_max=32, val_fraction=0.0, seed=0,
    )
    return prep


@pytest.fixture(scope="session")
def ae_run(tmp_path_factory, prepared64):
    """500-step micro autoencoder training on the 64-sample corpus."""
    out = tmp_path_factory.mktemp("ae_run")
    config = TrainConfig(
        stage="autoencoder", batch_size=4, learning_rate=2e-3,
        warmup_steps=50_000, max_steps=500, seed=1, checkpoint_every=10_000,
    )
    dataset = PreparedDataset(prepared64, split="train")
    checkpoint = train_autoencoder(config, micro_ae_config(TEST_RESOLUTION), dataset, out)
    return {"checkpoint": checkpoint, "out": out, "log": read_log(out / "train_log.jsonl")}


@pytest.fixture(scope="session")
def ldm_run(tmp_path_factory, prepared8, ae_run):
    """1000-step diffusion overfit on 8 samples over the frozen autoencoder."""
    out = tmp_path_factory.mktemp("ldm_run")
    dataset = PreparedDataset(prepared8)
    config = TrainConfig(
        stage="diffusion", batch_size=16, learning_rate=2e-3, max_steps=1000,
        seed=2, checkpoint_every=10_000, p_uncond=0.05, latent_mode="mean",
    )
    checkpoint = train_diffusion(
        config, dataset, ae_run["checkpoint"],
        micro_unet_config(TEST_RESOLUTION // 8), micro_text_config(), out,
    )
    return {
        "checkpoint": checkpoint,
        "out": out,
        "log": read_log(out / "train_log.jsonl"),
        "dataset": dataset,
    }


@pytest.fixture(scope="session")
def overfit_pipeline(ldm_run):
    return load_pipeline(ldm_run["checkpoint"])
