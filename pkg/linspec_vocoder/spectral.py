"""DSP front-end: Slaney mel scale, filterbanks, STFT/iSTFT and log filterbank spectrograms."""

from typing import Dict, Optional, Union
import logging
import math

import numpy as np
import torch
from torch import nn

from .config import SpectralConfig
from .errors import ConfigurationError
from .models import WaveformClip, MelSpec, LinearSpec, ComplexSpec, Spectrogram

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, torch.Tensor]

# Slaney scale constants
_F_SP = 200.0 / 3.0
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = math.log(6.4) / 27.0

# Keeps sqrt differentiable at exact zeros; far below any amplitude floor
_POWER_EPS = 1e-20


def hz_to_mel(f):
    """Slaney mel: linear below 1 kHz, logarithmic above."""
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(f_arr < 0):
        raise ValueError(f"frequency must be non-negative, got {f}")
    log_part = _MIN_LOG_MEL + np.log(np.maximum(f_arr, _MIN_LOG_HZ) / _MIN_LOG_HZ) / _LOGSTEP
    mel = np.where(f_arr <= _MIN_LOG_HZ, f_arr / _F_SP, log_part)
    return float(mel) if mel.ndim == 0 else mel


def mel_to_hz(m):
    """Exact inverse of hz_to_mel."""
    m_arr = np.asarray(m, dtype=np.float64)
    if np.any(m_arr < 0):
        raise ValueError(f"mel value must be non-negative, got {m}")
    log_part = _MIN_LOG_HZ * np.exp(_LOGSTEP * (np.maximum(m_arr, _MIN_LOG_MEL) - _MIN_LOG_MEL))
    hz = np.where(m_arr <= _MIN_LOG_MEL, m_arr * _F_SP, log_part)
    return float(hz) if hz.ndim == 0 else hz


def linear_hop(mel_f_max: float, n_mel: int) -> float:
    """Spacing of the linear filter banks: the width of one mel band at the bottom of the scale."""
    if mel_f_max <= 0 or n_mel < 1:
        raise ValueError(f"linear_hop needs mel_f_max > 0 and n_mel >= 1, got ({mel_f_max}, {n_mel})")
    return mel_to_hz(hz_to_mel(mel_f_max) / (n_mel + 1))


def fft_frequencies(cfg: SpectralConfig) -> np.ndarray:
    return np.linspace(0.0, cfg.nyquist, cfg.n_freq_bins)


def _triangles(lower: np.ndarray, center: np.ndarray, upper: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """Unit-peak triangles evaluated at the FFT bin frequencies."""
    rising = (freqs[None, :] - lower[:, None]) / (center - lower)[:, None]
    falling = (upper[:, None] - freqs[None, :]) / (upper - center)[:, None]
    return np.maximum(0.0, np.minimum(rising, falling))


def _check_resolution(centers: np.ndarray, cfg: SpectralConfig, name: str):
    bin_width = cfg.sample_rate / cfg.fft_size
    spacing = float(np.min(np.diff(np.concatenate([[0.0], centers]))))
    if spacing < bin_width:
        raise ConfigurationError(
            f"{name} filterbank centers are {spacing:.2f} Hz apart but FFT bins are {bin_width:.2f} Hz wide; "
            f"increase fft_size or reduce the number of banks"
        )


def build_mel_filterbank(cfg: SpectralConfig) -> np.ndarray:
    """[n_mel x n_freq_bins] Slaney triangles with centers equally spaced in mel from 0 to mel_f_max."""
    mel_points = np.linspace(0.0, hz_to_mel(cfg.mel_f_max), cfg.n_mel + 2)
    hz_points = mel_to_hz(mel_points)
    _check_resolution(hz_points[1:-1], cfg, "mel")
    return _triangles(hz_points[:-2], hz_points[1:-1], hz_points[2:], fft_frequencies(cfg))


def build_linear_filterbank(cfg: SpectralConfig) -> np.ndarray:
    """[n_linear x n_freq_bins] triangles centered at k * delta_f, k = 1..n_linear, each 2 * delta_f wide."""
    delta_f = cfg.delta_f
    centers = delta_f * np.arange(1, cfg.n_linear + 1, dtype=np.float64)
    if centers[-1] > cfg.nyquist:
        raise ConfigurationError(
            f"top linear center {centers[-1]:.1f} Hz exceeds Nyquist {cfg.nyquist:.1f} Hz"
        )
    _check_resolution(centers, cfg, "linear")
    return _triangles(centers - delta_f, centers, centers + delta_f, fft_frequencies(cfg))


class SpectralFrontend(nn.Module):
    """Tensor-level STFT, iSTFT and log filterbank features for one SpectralConfig.

    Works on batched tensors of shape [..., n_samples]; every method is differentiable
    so the vocoder losses can run through it.
    """

    def __init__(self, cfg: SpectralConfig):
        super().__init__()
        self.cfg = cfg.validate()
        self.register_buffer("window", torch.hann_window(cfg.window_size, dtype=torch.float64), persistent=False)
        self.register_buffer("mel_fb", torch.from_numpy(build_mel_filterbank(cfg)), persistent=False)
        self.register_buffer("linear_fb", torch.from_numpy(build_linear_filterbank(cfg)), persistent=False)

    @property
    def hop(self) -> int:
        return self.cfg.hop

    def n_frames(self, n_samples: int) -> int:
        return math.ceil(n_samples / self.cfg.hop)

    def stft(self, samples: torch.Tensor) -> torch.Tensor:
        """Center-padded STFT with ceil(n / hop) frames: [..., n] -> complex [..., F, T]."""
        n = samples.shape[-1]
        if n <= 0:
            raise ValueError("stft needs a positive number of samples")
        lead = samples.shape[:-1]
        spec = torch.stft(
            samples.reshape(-1, n),
            n_fft=self.cfg.fft_size,
            hop_length=self.cfg.hop,
            win_length=self.cfg.window_size,
            window=self.window.to(samples.dtype),
            center=True,
            pad_mode="constant",
            return_complex=True,
        )
        spec = spec[..., : self.n_frames(n)]
        return spec.reshape(*lead, *spec.shape[-2:])

    def istft(self, spec: torch.Tensor, length: Optional[int] = None) -> torch.Tensor:
        """Inverse of stft; by default returns exactly T * hop samples."""
        n_frames = spec.shape[-1]
        length = n_frames * self.cfg.hop if length is None else length
        if length <= 0:
            raise ValueError("istft needs a positive output length")
        lead = spec.shape[:-2]
        real_dtype = torch.float64 if spec.dtype == torch.complex128 else torch.float32
        audio = torch.istft(
            spec.reshape(-1, *spec.shape[-2:]),
            n_fft=self.cfg.fft_size,
            hop_length=self.cfg.hop,
            win_length=self.cfg.window_size,
            window=self.window.to(real_dtype),
            center=True,
            length=length,
        )
        return audio.reshape(*lead, length)

    @staticmethod
    def magnitude(spec: torch.Tensor) -> torch.Tensor:
        return torch.view_as_real(spec).pow(2).sum(-1).clamp_min(_POWER_EPS).sqrt()

    def _log_pool(self, samples: torch.Tensor, filterbank: torch.Tensor) -> torch.Tensor:
        mag = self.magnitude(self.stft(samples))
        pooled = torch.matmul(filterbank.to(mag.dtype), mag)
        return torch.log(torch.clamp(pooled, min=self.cfg.amplitude_floor))

    def mel(self, samples: torch.Tensor) -> torch.Tensor:
        """[..., n] -> [..., n_mel, T] log mel filterbank magnitudes."""
        return self._log_pool(samples, self.mel_fb)

    def linear(self, samples: torch.Tensor) -> torch.Tensor:
        """[..., n] -> [..., n_linear, T] log linear filterbank magnitudes."""
        return self._log_pool(samples, self.linear_fb)

    def log_magnitude(self, samples: torch.Tensor) -> torch.Tensor:
        """[..., n] -> [..., n_freq_bins, T] raw log STFT magnitude."""
        mag = self.magnitude(self.stft(samples))
        return torch.log(torch.clamp(mag, min=self.cfg.amplitude_floor))

    def features(self, samples: torch.Tensor, kind: str) -> torch.Tensor:
        if kind == "mel":
            return self.mel(samples)
        if kind == "linear":
            return self.linear(samples)
        raise ValueError(f"unknown feature kind: {kind}")


_frontends: Dict[bytes, SpectralFrontend] = {}


def get_frontend(cfg: SpectralConfig) -> SpectralFrontend:
    """Shared frontend per DSP configuration."""
    key = cfg.fingerprint()
    if key not in _frontends:
        _frontends[key] = SpectralFrontend(cfg)
    return _frontends[key]


def _samples_tensor(w: WaveformClip, cfg: SpectralConfig) -> torch.Tensor:
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip is {w.sample_rate} Hz but the configuration expects {cfg.sample_rate} Hz")
    return torch.from_numpy(np.asarray(w.samples, dtype=np.float64))


def stft(w: WaveformClip, cfg: SpectralConfig) -> ComplexSpec:
    with torch.no_grad():
        spec = get_frontend(cfg).stft(_samples_tensor(w, cfg))
    return ComplexSpec(values=spec.numpy())


def istft(s: ComplexSpec, cfg: SpectralConfig, length: Optional[int] = None) -> WaveformClip:
    with torch.no_grad():
        audio = get_frontend(cfg).istft(torch.from_numpy(np.asarray(s.values)), length=length)
    return WaveformClip(samples=audio.numpy(), sample_rate=cfg.sample_rate)


def mel_spectrogram(w: WaveformClip, cfg: SpectralConfig) -> MelSpec:
    with torch.no_grad():
        values = get_frontend(cfg).mel(_samples_tensor(w, cfg))
    return MelSpec(values=values.numpy())


def linear_spectrogram(w: WaveformClip, cfg: SpectralConfig) -> LinearSpec:
    with torch.no_grad():
        values = get_frontend(cfg).linear(_samples_tensor(w, cfg))
    return LinearSpec(values=values.numpy())


def _stats_like(cfg: SpectralConfig, values: ArrayLike):
    mean = np.asarray(cfg.norm_mean, dtype=np.float64)
    std = np.asarray(cfg.norm_std, dtype=np.float64)
    if np.any(std <= 0):
        raise ConfigurationError("normalization std must be positive; recompute corpus statistics")
    if mean.ndim == 1:
        mean = mean[:, None]
    if std.ndim == 1:
        std = std[:, None]
    if isinstance(values, torch.Tensor):
        return (torch.as_tensor(mean, dtype=values.dtype, device=values.device),
                torch.as_tensor(std, dtype=values.dtype, device=values.device))
    return mean, std


def normalize_values(values: ArrayLike, cfg: SpectralConfig) -> ArrayLike:
    """(clip_at_floor(x) - mean) / std for arrays or tensors."""
    mean, std = _stats_like(cfg, values)
    if isinstance(values, torch.Tensor):
        clipped = torch.clamp(values, min=cfg.loudness_floor)
    else:
        clipped = np.maximum(values, cfg.loudness_floor)
    return (clipped - mean) / std


def denormalize_values(values: ArrayLike, cfg: SpectralConfig) -> ArrayLike:
    mean, std = _stats_like(cfg, values)
    return values * std + mean


def normalized_floor(cfg: SpectralConfig) -> Union[float, np.ndarray]:
    """The normalized value of the loudness floor; one value per bin under per-bin statistics."""
    mean, std = _stats_like(cfg, np.zeros(1))
    floor = np.asarray((cfg.loudness_floor - mean) / std, dtype=np.float64)
    if floor.size == 1:
        return float(floor.reshape(-1)[0])
    return floor.reshape(-1)



def normalize(spec: Spectrogram, cfg: SpectralConfig) -> Spectrogram:
    if spec.normalized:
        return spec
    values = normalize_values(spec.values.astype(np.float64), cfg)
    return type(spec)(values=values.astype(np.float32), normalized=True)


def denormalize(spec: Spectrogram, cfg: SpectralConfig) -> Spectrogram:
    if not spec.normalized:
        return spec
    values = denormalize_values(spec.values.astype(np.float64), cfg)
    return type(spec)(values=values.astype(np.float32), normalized=False)
