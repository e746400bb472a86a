"""GAN vocoders: the 2D-convolution Vocos2D generator, the 1D baseline Vocos generator,
the multi-resolution discriminator, discriminator augmentation and the GAN losses."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.parametrizations import weight_norm
from einops import rearrange

from .config import (
    SpectralConfig, Vocos2DConfig, BaselineVocosConfig, DAConfig, DiscriminatorConfig, LossWeights,
)
from .models import GanLossReport, Spectrogram, WaveformClip
from .spectral import SpectralFrontend

logger = logging.getLogger(__name__)

LRELU_SLOPE = 0.1
MAX_MAGNITUDE = 1e2


def combine_log_magnitude_phase(m: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """exp(m) * (cos phi + i sin phi), with the magnitude clipped at 1e2."""
    mag = torch.clip(torch.exp(m), max=MAX_MAGNITUDE)
    return torch.complex(mag * torch.cos(phi), mag * torch.sin(phi))


def group_bins(x: torch.Tensor, freq_grid: int) -> torch.Tensor:
    """[B, bins, T] -> [B, freq_grid, T, group]: consecutive input bins per generator frequency row.

    Bins are zero-padded at the top when they do not split evenly.
    """
    group = math.ceil(x.shape[1] / freq_grid)
    pad = group * freq_grid - x.shape[1]
    if pad:
        x = F.pad(x, (0, 0, 0, pad))
    return rearrange(x, "b (f g) t -> b f t g", f=freq_grid)


def transposed_freq_geometry(freq_grid: int, out_bins: int) -> Tuple[int, int, int]:
    """(kernel, stride, padding) of a transposed conv mapping freq_grid rows to exactly out_bins."""
    stride = (out_bins - 1) // (freq_grid - 1)
    base = out_bins - (freq_grid - 1) * stride
    padding = max(0, math.ceil((stride - base) / 2))
    return base + 2 * padding, stride, padding


class ConvNeXtBlock(nn.Module):
    """1D ConvNeXt block over frames (channels = hidden)."""

    def __init__(self, dim: int, intermediate_dim: int, layer_scale_init_value: float, kernel: int = 7):
        super().__init__()
        self.dwconv = nn.Conv1d(dim, dim, kernel_size=kernel, padding=kernel // 2, groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, intermediate_dim)
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(intermediate_dim, dim)
        self.gamma = nn.Parameter(layer_scale_init_value * torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = x
        x = self.dwconv(x).transpose(1, 2)
        x = self.pwconv2(self.act(self.pwconv1(self.norm(x))))
        x = (self.gamma * x).transpose(1, 2)
        return residual + x


class ConvNeXt2DBlock(nn.Module):
    """2D ConvNeXt block over [hidden, freq, time] planes.

    With `shortcut_bins` set, a per-block linear layer regresses the grouped input spectrogram
    into the expanded stage before the activation.
    """

    def __init__(self, dim: int, intermediate_dim: int, layer_scale_init_value: float,
                 kernel: Tuple[int, int] = (7, 7), shortcut_bins: Optional[int] = None):
        super().__init__()
        k_time, k_freq = kernel
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=(k_freq, k_time), padding=(k_freq // 2, k_time // 2),
                                groups=dim)
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.pwconv1 = nn.Linear(dim, intermediate_dim)
        self.shortcut = nn.Linear(shortcut_bins, intermediate_dim) if shortcut_bins else None
        self.act = nn.GELU()
        self.pwconv2 = nn.Linear(intermediate_dim, dim)
        self.gamma = nn.Parameter(layer_scale_init_value * torch.ones(dim))

    def forward(self, x: torch.Tensor, x_in: Optional[torch.Tensor] = None) -> torch.Tensor:
        """x: [B, dim, F, T]; x_in: grouped input [B, F, T, group] or None."""
        residual = x
        x = self.dwconv(x).permute(0, 2, 3, 1)
        x = self.pwconv1(self.norm(x))
        if self.shortcut is not None and x_in is not None:
            x = x + self.shortcut(x_in)
        x = self.pwconv2(self.act(x))
        x = (self.gamma * x).permute(0, 3, 1, 2)
        return residual + x


def _init_weights(m: nn.Module):
    if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
        nn.init.trunc_normal_(m.weight, std=0.02)
        if m.bias is not None:
            nn.init.constant_(m.bias, 0)


class Vocos2DGenerator(nn.Module):
    """Log filterbank spectrogram [B, input_bins, T] -> waveform [B, T * hop]."""

    def __init__(self, cfg: Vocos2DConfig, spectral: SpectralConfig):
        super().__init__()
        self.cfg = cfg.validate(spectral)
        hidden = cfg.hidden
        self.group = math.ceil(cfg.input_bins / cfg.freq_grid)
        self.input_proj = nn.Linear(cfg.input_bins, hidden)
        self.freq_embed = nn.Parameter(torch.zeros(cfg.freq_grid, hidden))
        self.norm = nn.LayerNorm(hidden, eps=1e-6)
        scale = cfg.layer_scale_init if cfg.layer_scale_init is not None else 1.0 / cfg.n_blocks
        self.blocks = nn.ModuleList([
            ConvNeXt2DBlock(hidden, cfg.bottleneck_expand * hidden, scale, cfg.depthwise_kernel, self.group)
            for _ in range(cfg.n_blocks)
        ])
        self.final_layer_norm = nn.LayerNorm(hidden, eps=1e-6)
        kernel, stride, padding = transposed_freq_geometry(cfg.freq_grid, cfg.out_bins)
        self.upsample = nn.ConvTranspose2d(hidden, 2, kernel_size=(kernel, 1), stride=(stride, 1),
                                           padding=(padding, 0))
        self.frontend = SpectralFrontend(spectral)
        self.apply(_init_weights)
        nn.init.trunc_normal_(self.freq_embed, std=0.02)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        """Per-frame projection broadcast over frequency rows, plus frequency embeddings: -> [B, hidden, F, T]."""
        h = self.input_proj(x.transpose(1, 2))
        h = h.unsqueeze(1) + self.freq_embed[None, :, None, :]
        return self.norm(h).permute(0, 3, 1, 2)

    def backbone(self, x: torch.Tensor) -> torch.Tensor:
        """Input spectrogram -> backbone output y' [B, hidden, F, T] (before the final norm)."""
        if x.dim() != 3 or x.shape[1] != self.cfg.input_bins:
            raise ValueError(f"expected [B, {self.cfg.input_bins}, T] input, got {tuple(x.shape)}")
        shortcut = group_bins(x, self.cfg.freq_grid)
        h = self.embed(x)
        for block in self.blocks:
            h = block(h, shortcut)
        return h

    def head(self, h: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Backbone output -> (log magnitude m, phase phi), each [B, out_bins, T]."""
        h = self.final_layer_norm(h.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)
        out = self.upsample(h)
        return out[:, 0], out[:, 1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        m, phi = self.head(self.backbone(x))
        return self.frontend.istft(combine_log_magnitude_phase(m, phi))


class ISTFTHead(nn.Module):
    """Linear projection to log magnitude and phase, then iSTFT."""

    def __init__(self, dim: int, spectral: SpectralConfig):
        super().__init__()
        self.out = nn.Linear(dim, spectral.fft_size + 2)
        self.frontend = SpectralFrontend(spectral)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [B, T, dim] -> waveform [B, T * hop]."""
        m, phi = self.out(x).transpose(1, 2).chunk(2, dim=1)
        return self.frontend.istft(combine_log_magnitude_phase(m, phi))


class BaselineVocosGenerator(nn.Module):
    """1D Vocos: frames as positions, frequency bins as channels."""

    def __init__(self, cfg: BaselineVocosConfig, spectral: SpectralConfig):
        super().__init__()
        self.cfg = cfg.validate(spectral)
        self.embed = nn.Conv1d(cfg.input_bins, cfg.hidden, kernel_size=7, padding=3)
        self.norm = nn.LayerNorm(cfg.hidden, eps=1e-6)
        scale = cfg.layer_scale_init if cfg.layer_scale_init is not None else 1.0 / cfg.n_blocks
        self.convnext = nn.ModuleList([
            ConvNeXtBlock(cfg.hidden, cfg.bottleneck_expand * cfg.hidden, scale, cfg.kernel)
            for _ in range(cfg.n_blocks)
        ])
        self.final_layer_norm = nn.LayerNorm(cfg.hidden, eps=1e-6)
        self.head = ISTFTHead(cfg.hidden, spectral)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.cfg.input_bins:
            raise ValueError(f"expected [B, {self.cfg.input_bins}, T] input, got {tuple(x.shape)}")
        h = self.norm(self.embed(x).transpose(1, 2)).transpose(1, 2)
        for block in self.convnext:
            h = block(h)
        return self.head(self.final_layer_norm(h.transpose(1, 2)))


@torch.no_grad()
def vocode(generator: nn.Module, spec: Spectrogram, sample_rate: int = 44100) -> WaveformClip:
    """Run a generator on one un-normalized spectrogram."""
    device = next(generator.parameters()).device
    x = torch.from_numpy(np.asarray(spec.values, dtype=np.float32)).unsqueeze(0).to(device)
    audio = generator(x)[0].float().cpu().numpy()
    return WaveformClip(samples=audio, sample_rate=sample_rate)


@dataclass
class AugmentDraw:
    """One augmentation draw per batch item; reused for the real and fake halves of a step."""

    gain_db: torch.Tensor
    shift: torch.Tensor
    theta: torch.Tensor

    @classmethod
    def identity(cls, batch: int) -> "AugmentDraw":
        return cls(torch.zeros(batch), torch.zeros(batch, dtype=torch.long), torch.zeros(batch))


def draw_augmentation(batch: int, cfg: DAConfig, generator: Optional[torch.Generator] = None) -> AugmentDraw:
    if not cfg.enabled:
        return AugmentDraw.identity(batch)
    gain_db = (torch.rand(batch, generator=generator, dtype=torch.float64) * 2 - 1) * cfg.loudness_range_db
    shift = torch.randint(0, cfg.max_shift + 1, (batch,), generator=generator)
    theta = torch.rand(batch, generator=generator, dtype=torch.float64) * 2 * math.pi
    return AugmentDraw(gain_db=gain_db, shift=shift, theta=theta)


def apply_gain(w: torch.Tensor, gain_db: torch.Tensor) -> torch.Tensor:
    return w * torch.pow(10.0, gain_db / 20.0).to(w)[:, None]


def circular_shift(w: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    n = w.shape[-1]
    index = (torch.arange(n, device=w.device)[None, :] - shift.to(w.device)[:, None]) % n
    return torch.gather(w, 1, index)


def rotate_phase(w: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Constant all-pass rotation: positive frequencies times e^{i theta}.

    DC (and Nyquist for even lengths) are their own conjugates and scale by cos theta.
    """
    n = w.shape[-1]
    spec = torch.fft.rfft(w, dim=-1)
    theta = theta.to(device=w.device, dtype=w.dtype)[:, None]
    rot = torch.complex(torch.cos(theta), torch.sin(theta)).expand(-1, spec.shape[-1])
    edge = torch.zeros(spec.shape[-1], dtype=torch.bool, device=w.device)
    edge[0] = True
    if n % 2 == 0:
        edge[-1] = True
    rot = torch.where(edge[None, :], torch.complex(torch.cos(theta), torch.zeros_like(theta)).expand_as(rot), rot)
    return torch.fft.irfft(spec * rot, n=n, dim=-1)


def da_transform(w: torch.Tensor, draw: AugmentDraw) -> torch.Tensor:
    """Gain, circular shift, then phase rotation; differentiable in w. w: [B, n]."""
    return rotate_phase(circular_shift(apply_gain(w, draw.gain_db), draw.shift), draw.theta)


class DiscriminatorR(nn.Module):
    """2D conv stack over the STFT magnitude at one resolution."""

    def __init__(self, resolution: Sequence[int], channels: int = 32):
        super().__init__()
        self.resolution = tuple(resolution)
        self.register_buffer("window", torch.hann_window(self.resolution[2]), persistent=False)
        self.convs = nn.ModuleList([
            weight_norm(nn.Conv2d(1, channels, (3, 9), padding=(1, 4))),
            weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(channels, channels, (3, 9), stride=(1, 2), padding=(1, 4))),
            weight_norm(nn.Conv2d(channels, channels, (3, 3), padding=(1, 1))),
        ])
        self.conv_post = weight_norm(nn.Conv2d(channels, 1, (3, 3), padding=(1, 1)))

    def spectrogram(self, x: torch.Tensor) -> torch.Tensor:
        n_fft, hop_length, win_length = self.resolution
        pad = (n_fft - hop_length) // 2
        x = F.pad(x.unsqueeze(1), (pad, pad), mode="reflect").squeeze(1)
        spec = torch.stft(x, n_fft=n_fft, hop_length=hop_length, win_length=win_length,
                          window=self.window.to(x.dtype), center=False, return_complex=True)
        return torch.view_as_real(spec).pow(2).sum(-1).clamp_min(1e-12).sqrt()

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        fmap = []
        h = self.spectrogram(x).unsqueeze(1)
        for conv in self.convs:
            h = F.leaky_relu(conv(h), LRELU_SLOPE)
            fmap.append(h)
        h = self.conv_post(h)
        fmap.append(h)
        return torch.flatten(h, 1, -1), fmap


class MultiResolutionDiscriminator(nn.Module):
    """One DiscriminatorR per configured resolution; there is no period-based branch."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.discriminators = nn.ModuleList([DiscriminatorR(r, cfg.channels) for r in cfg.resolutions])

    @property
    def weights(self) -> List[float]:
        return list(self.cfg.weights) if self.cfg.weights is not None else [1.0] * len(self.discriminators)

    def forward(self, w: torch.Tensor) -> Tuple[List[torch.Tensor], List[List[torch.Tensor]]]:
        """w: [B, n] -> (one logit map per resolution, feature maps per resolution)."""
        logits, fmaps = [], []
        for disc in self.discriminators:
            logit, fmap = disc(w)
            logits.append(logit)
            fmaps.append(fmap)
        return logits, fmaps


def discriminator_hinge_loss(real_logits: List[torch.Tensor], fake_logits: List[torch.Tensor],
                             weights: Optional[List[float]] = None) -> torch.Tensor:
    weights = weights or [1.0] * len(real_logits)
    loss = 0.0
    for w, dr, dg in zip(weights, real_logits, fake_logits):
        loss = loss + w * (torch.mean(F.relu(1 - dr)) + torch.mean(F.relu(1 + dg)))
    return loss


def generator_adversarial_loss(fake_logits: List[torch.Tensor], weights: Optional[List[float]] = None) -> torch.Tensor:
    weights = weights or [1.0] * len(fake_logits)
    loss = 0.0
    for w, dg in zip(weights, fake_logits):
        loss = loss + w * torch.mean(-dg)
    return loss


def feature_matching_loss(real_fmaps: List[List[torch.Tensor]], fake_fmaps: List[List[torch.Tensor]]) -> torch.Tensor:
    loss = 0.0
    for dr, dg in zip(real_fmaps, fake_fmaps):
        for rl, gl in zip(dr, dg):
            loss = loss + torch.mean(torch.abs(rl.detach() - gl))
    return loss


class GanCriterion(nn.Module):
    """Discriminator and generator objectives with augmentation in front of the discriminator."""

    def __init__(self, discriminator: MultiResolutionDiscriminator, spectral: SpectralConfig,
                 weights: Optional[LossWeights] = None):
        super().__init__()
        self.discriminator = discriminator
        self.frontend = SpectralFrontend(spectral)
        self.weights = weights or LossWeights()

    def mel_l1(self, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
        return F.l1_loss(self.frontend.mel(fake), self.frontend.mel(real))

    def discriminator_loss(self, real: torch.Tensor, fake: torch.Tensor, draw: AugmentDraw) -> torch.Tensor:
        real_logits, _ = self.discriminator(da_transform(real, draw))
        fake_logits, _ = self.discriminator(da_transform(fake.detach(), draw))
        return discriminator_hinge_loss(real_logits, fake_logits, self.discriminator.weights)

    def generator_loss(self, real: torch.Tensor, fake: torch.Tensor,
                       draw: AugmentDraw) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
        _, real_fmaps = self.discriminator(da_transform(real, draw))
        fake_logits, fake_fmaps = self.discriminator(da_transform(fake, draw))
        parts = {
            "adversarial": generator_adversarial_loss(fake_logits, self.discriminator.weights),
            "feature_matching": feature_matching_loss(real_fmaps, fake_fmaps),
            "spectral_l1": self.mel_l1(real, fake),
        }
        total = (self.weights.adversarial * parts["adversarial"]
                 + self.weights.feature_matching * parts["feature_matching"]
                 + self.weights.mel * parts["spectral_l1"])
        return total, parts


@torch.no_grad()
def gan_losses(real: torch.Tensor, fake: torch.Tensor, criterion: GanCriterion,
               draw: Optional[AugmentDraw] = None) -> GanLossReport:
    """Every loss term for one (real, fake) batch under a single augmentation draw."""
    if real.shape != fake.shape:
        raise ValueError(f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ in shape")
    draw = draw or AugmentDraw.identity(real.shape[0])
    total, parts = criterion.generator_loss(real, fake, draw)
    d_loss = criterion.discriminator_loss(real, fake, draw)
    return GanLossReport(
        adversarial=float(parts["adversarial"]),
        feature_matching=float(parts["feature_matching"]),
        spectral_l1=float(parts["spectral_l1"]),
        total=float(total),
        discriminator_loss=float(d_loss),
    )
