"""DDPM forward process, epsilon-prediction loss and the DPM++ 2M Karras sampler."""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union
import logging

import numpy as np
import torch
import torch.nn.functional as F

from .config import DiffusionConfig

logger = logging.getLogger(__name__)

# model(x_t [B, bins, T], c [B, n_mel, T], t [B]) -> predicted eps [B, bins, T]
EpsModel = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass
class NoiseSchedule:
    """Discrete variance-preserving schedule."""

    n_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def linear(cls, n_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        if n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {n_steps}")
        if not 0 < beta_start < beta_end < 1:
            raise ValueError(f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})")
        betas = np.linspace(beta_start, beta_end, n_steps, dtype=np.float64)
        alphas = 1.0 - betas
        return cls(n_steps=n_steps, betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))

    @classmethod
    def from_config(cls, cfg: DiffusionConfig) -> "NoiseSchedule":
        return cls.linear(cfg.n_steps, cfg.beta_start, cfg.beta_end)

    @property
    def sigmas(self) -> np.ndarray:
        """sigma(t) = sqrt((1 - alpha_bar_t) / alpha_bar_t), increasing in t."""
        return np.sqrt((1.0 - self.alpha_bars) / self.alpha_bars)

    @property
    def sigma_min(self) -> float:
        return float(self.sigmas[0])

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])

    def sigma_to_t(self, sigma: float) -> int:
        """Nearest discrete step in log-sigma."""
        if sigma <= 0:
            raise ValueError(f"sigma must be positive, got {sigma}")
        return int(np.argmin(np.abs(np.log(self.sigmas) - np.log(sigma))))


def karras_sigmas(n: int, sigma_min: float, sigma_max: float, rho: float = 7.0) -> np.ndarray:
    """Karras ladder of n sigmas from sigma_max down to sigma_min, followed by 0."""
    if n < 2:
        raise ValueError(f"karras ladder needs n >= 2, got {n}")
    if not sigma_max > sigma_min > 0:
        raise ValueError(f"need sigma_max > sigma_min > 0, got ({sigma_min}, {sigma_max})")
    ramp = np.arange(n, dtype=np.float64) / (n - 1)
    min_inv_rho = sigma_min ** (1.0 / rho)
    max_inv_rho = sigma_max ** (1.0 / rho)
    sigmas = (max_inv_rho + ramp * (min_inv_rho - max_inv_rho)) ** rho
    sigmas[0], sigmas[-1] = sigma_max, sigma_min
    return np.append(sigmas, 0.0)


@dataclass
class SamplerPlan:
    n_sample_steps: int = 32
    rho: float = 7.0
    sigma_min: float = 0.01
    sigma_max: float = 157.0

    @classmethod
    def from_config(cls, cfg: DiffusionConfig, schedule: NoiseSchedule,
                    n_sample_steps: Optional[int] = None) -> "SamplerPlan":
        return cls(
            n_sample_steps=cfg.n_sample_steps if n_sample_steps is None else n_sample_steps,
            rho=cfg.rho,
            sigma_min=schedule.sigma_min if cfg.sigma_min is None else cfg.sigma_min,
            sigma_max=schedule.sigma_max if cfg.sigma_max is None else cfg.sigma_max,
        )

    @property
    def sigmas(self) -> np.ndarray:
        if self.n_sample_steps < 1:
            raise ValueError(f"n_sample_steps must be >= 1, got {self.n_sample_steps}")
        if self.n_sample_steps == 1:
            return np.array([self.sigma_max, 0.0])
        return karras_sigmas(self.n_sample_steps, self.sigma_min, self.sigma_max, self.rho)


def _check_steps(t: torch.Tensor, schedule: NoiseSchedule):
    if torch.any(t < 0) or torch.any(t >= schedule.n_steps):
        raise ValueError(f"diffusion step out of [0, {schedule.n_steps})")


def _per_item(values: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    picked = torch.as_tensor(values, dtype=torch.float64)[t.long().cpu()]
    return picked.to(device=like.device, dtype=like.dtype).reshape(-1, *([1] * (like.dim() - 1)))


def forward_diffuse(x0: torch.Tensor, t: Union[int, torch.Tensor], eps: torch.Tensor,
                    schedule: NoiseSchedule) -> torch.Tensor:
    """sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps, with t a scalar or one step per batch item."""
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} differs from x0 shape {tuple(x0.shape)}")
    steps = torch.as_tensor(t).reshape(-1)
    _check_steps(steps, schedule)
    if steps.numel() == 1:
        alpha_bar = float(schedule.alpha_bars[int(steps.item())])
        return alpha_bar ** 0.5 * x0 + (1.0 - alpha_bar) ** 0.5 * eps
    if steps.numel() != x0.shape[0]:
        raise ValueError("need one diffusion step per batch item")
    alpha_bar = _per_item(schedule.alpha_bars, steps, x0)
    return alpha_bar.sqrt() * x0 + (1.0 - alpha_bar).sqrt() * eps


def training_loss(model: EpsModel, x0: torch.Tensor, c: torch.Tensor, schedule: NoiseSchedule,
                  generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Epsilon-prediction MSE at uniformly drawn steps.

    x0: normalized linear spectrograms [B, bins, T]; c: normalized mel [B, n_mel, T].
    """
    if x0.shape[-1] != c.shape[-1] or x0.shape[0] != c.shape[0]:
        raise ValueError(f"target {tuple(x0.shape)} and condition {tuple(c.shape)} are not frame-aligned")
    t = torch.randint(0, schedule.n_steps, (x0.shape[0],), generator=generator, device=x0.device)
    eps = torch.randn(x0.shape, generator=generator, device=x0.device, dtype=x0.dtype)
    x_t = forward_diffuse(x0, t, eps, schedule)
    pred = model(x_t, c, t)
    return F.mse_loss(pred.float(), eps.float())


class EpsDenoiser:
    """Bridges an epsilon model on the discrete VP schedule to the sigma parameterization.

    x = x0 + sigma * eps is fed to the model as x / sqrt(1 + sigma^2) at the nearest step.
    """

    def __init__(self, model: EpsModel, schedule: NoiseSchedule):
        self.model = model
        self.schedule = schedule

    def __call__(self, x: torch.Tensor, sigma: float, c: torch.Tensor) -> torch.Tensor:
        t = torch.full((x.shape[0],), self.schedule.sigma_to_t(sigma), dtype=torch.long, device=x.device)
        eps = self.model(x / (1.0 + sigma ** 2) ** 0.5, c, t)
        return x - sigma * eps.to(x.dtype)


def initial_noise(shape: Sequence[int], seeds: List[int], device=None) -> torch.Tensor:
    """One independently seeded draw per batch item, so batching never changes an item's noise."""
    if len(seeds) != shape[0]:
        raise ValueError(f"need {shape[0]} seeds, got {len(seeds)}")
    draws = [torch.randn(tuple(shape[1:]), generator=torch.Generator().manual_seed(int(s))) for s in seeds]
    return torch.stack(draws).to(device)


@torch.no_grad()
def dpmpp_2m_sample(model: EpsModel, c: torch.Tensor, plan: SamplerPlan, schedule: NoiseSchedule,
                    seed: Union[int, List[int]], out_bins: int,
                    callback: Optional[Callable[[int, int], None]] = None) -> torch.Tensor:
    """Deterministic multistep sampling of normalized spectrograms [B, out_bins, T] given mel c [B, n_mel, T].

    An int seed gives item i the seed `seed + i`.
    """
    sigmas = plan.sigmas
    seeds = [seed + i for i in range(c.shape[0])] if isinstance(seed, int) else list(seed)
    denoiser = EpsDenoiser(model, schedule)
    x = initial_noise((c.shape[0], out_bins, c.shape[-1]), seeds, device=c.device) * float(sigmas[0])

    old_denoised = None
    n = len(sigmas) - 1
    for i in range(n):
        sigma, sigma_next = float(sigmas[i]), float(sigmas[i + 1])
        denoised = denoiser(x, sigma, c)
        if sigma_next == 0.0:
            x = denoised
        else:
            t, t_next = -np.log(sigma), -np.log(sigma_next)
            h = t_next - t
            if old_denoised is None:
                d = denoised
            else:
                h_last = t - (-np.log(float(sigmas[i - 1])))
                r = h_last / h
                d = (1.0 + 1.0 / (2.0 * r)) * denoised - (1.0 / (2.0 * r)) * old_denoised
            x = (sigma_next / sigma) * x - float(np.expm1(-h)) * d
        old_denoised = denoised
        if callback is not None:
            callback(i + 1, n)
    return x
