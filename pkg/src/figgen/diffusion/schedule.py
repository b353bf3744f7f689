"""Linear noise schedule and the forward corruption process.

Tables are kept in float64 and cast to the input dtype on use, so exact-
noise inversion stays accurate even near alpha_bar -> 0.
"""

from dataclasses import dataclass

import torch

DEFAULT_T = 1000
DEFAULT_BETA_START = 8.5e-5
DEFAULT_BETA_END = 1.2e-2


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor
    alphas: torch.Tensor
    alpha_bars: torch.Tensor
    beta_start: float
    beta_end: float

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0]

    def snr(self) -> torch.Tensor:
        return self.alpha_bars / (1.0 - self.alpha_bars)

    def alpha_bar(self, t) -> torch.Tensor:
        """alpha_bar at step t; t = -1 denotes the clean endpoint (= 1)."""
        t = torch.as_tensor(t, dtype=torch.long)
        if bool((t < -1).any()) or bool((t >= self.num_steps).any()):
            raise ValueError(f"timestep {t} outside [-1, {self.num_steps})")
        padded = torch.cat([torch.ones(1, dtype=self.alpha_bars.dtype), self.alpha_bars])
        return padded[t + 1]


def build_schedule(
    num_steps: int = DEFAULT_T,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """betas[i] = beta_start + i * (beta_end - beta_start) / (T - 1)."""
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = torch.linspace(beta_start, beta_end, num_steps, dtype=torch.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(
        betas=betas,
        alphas=alphas,
        alpha_bars=torch.cumprod(alphas, dim=0),
        beta_start=beta_start,
        beta_end=beta_end,
    )


def _gather(table: torch.Tensor, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Per-batch coefficient lookup broadcast to the shape of `like`."""
    coef = table[t].to(like.dtype)
    return coef.view(-1, *([1] * (like.ndim - 1)))


def q_sample(x0: torch.Tensor, t, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward corruption: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    if noise.shape != x0.shape:
        raise ValueError(f"noise shape {tuple(noise.shape)} != x0 shape {tuple(x0.shape)}")
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if bool((t < 0).any()) or bool((t >= schedule.num_steps).any()):
        raise ValueError(f"timestep outside [0, {schedule.num_steps})")
    abar = schedule.alpha_bars
    return _gather(abar.sqrt(), t, x0) * x0 + _gather((1.0 - abar).sqrt(), t, x0) * noise


def predict_x0(x_t: torch.Tensor, eps: torch.Tensor, t, schedule: NoiseSchedule) -> torch.Tensor:
    """Invert the corruption given the noise: (x_t - sqrt(1-abar) eps) / sqrt(abar)."""
    t = torch.as_tensor(t, dtype=torch.long).reshape(-1)
    if bool((t < 0).any()) or bool((t >= schedule.num_steps).any()):
        raise ValueError(f"timestep outside [0, {schedule.num_steps})")
    abar = schedule.alpha_bars
    return (x_t - _gather((1.0 - abar).sqrt(), t, x_t) * eps) / _gather(abar.sqrt(), t, x_t)
