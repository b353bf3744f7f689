"""Deterministic seeding shared by training, sampling, and data prep.

All per-step randomness in this package is derived statelessly from
(seed, step, stream) so that resuming a run at step k reproduces the
uninterrupted run bit-exactly: no RNG state has to survive a restart.
"""

import os

import numpy as np
import torch

DETERMINISTIC_ENV = "FIGGEN_DETERMINISTIC"


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def configure_determinism() -> None:
    """Honor FIGGEN_DETERMINISTIC=1: single-threaded, deterministic kernels."""
    if deterministic_mode():
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


def step_rng(seed: int, step: int, stream: str = "") -> np.random.Generator:
    """Stateless per-step RNG: a pure function of (seed, step, stream)."""
    entropy = [seed & 0xFFFFFFFF, step & 0xFFFFFFFF] + [ord(c) for c in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    """Seed a fresh torch.Generator from a numpy Generator."""
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**63 - 1)))
    return gen


def seeded_generator(seed: int, step: int = 0, stream: str = "") -> torch.Generator:
    return torch_generator(step_rng(seed, step, stream))
