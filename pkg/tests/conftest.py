"""Shared fixtures: tiny model configs, synthetic signals and on-disk corpora."""

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import soundfile as sf
import torch

from linspec_vocoder.config import (
    BaselineVocosConfig, ClassifierConfig, GlobalConfig, LseConfig, SpectralConfig, Vocos2DConfig,
)

SR = 44100


def tone(freq: float, seconds: float, sr: int = SR, amplitude: float = 0.5) -> np.ndarray:
    t = np.arange(int(round(seconds * sr))) / sr
    return (amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32)


def sweep(seconds: float, f0: float = 100.0, f1: float = 16000.0, sr: int = SR) -> np.ndarray:
    t = np.arange(int(round(seconds * sr))) / sr
    k = (f1 - f0) / seconds
    return (0.4 * np.sin(2 * np.pi * (f0 * t + 0.5 * k * t ** 2))).astype(np.float32)


def write_wav(path: Path, samples: np.ndarray, sr: int = SR) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    sf.write(str(path), samples, sr, subtype="FLOAT")
    return path


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def spectral() -> SpectralConfig:
    return SpectralConfig()


@pytest.fixture
def tiny_lse() -> LseConfig:
    return LseConfig(n_blocks=2, n_heads=2, hidden=32, timestep_freq_dim=32)


@pytest.fixture
def tiny_vocos2d() -> Vocos2DConfig:
    return Vocos2DConfig(n_blocks=2, hidden=16)


@pytest.fixture
def tiny_baseline() -> BaselineVocosConfig:
    return BaselineVocosConfig(n_blocks=2, hidden=32)


@pytest.fixture
def tiny_classifier() -> ClassifierConfig:
    return ClassifierConfig(n_blocks=4, stage_blocks=[1, 1, 1, 1], channels=[8, 8, 16, 16])


@pytest.fixture
def tiny_config(tmp_path, tiny_lse, tiny_vocos2d, tiny_baseline, tiny_classifier) -> GlobalConfig:
    """Desk-scale configuration writing into tmp_path."""
    config = GlobalConfig(
        lse=tiny_lse,
        vocos2d=tiny_vocos2d,
        vocos=tiny_baseline,
        classifier=tiny_classifier,
    )
    config.paths = replace(config.paths, cache_dir=str(tmp_path / "cache"),
                           checkpoint_dir=str(tmp_path / "checkpoints"))
    config.optim_lse = replace(config.optim_lse, batch_size=2, segment_seconds=0.4, precision="fp32",
                               checkpoint_every=2)
    config.optim_vocoder = replace(config.optim_vocoder, batch_size=2, segment_seconds=0.4, checkpoint_every=2)
    config.optim_classifier = replace(config.optim_classifier, batch_size=4, checkpoint_every=5)
    config.da = replace(config.da, max_shift=100)
    config.classifier = replace(config.classifier, crop_seconds=0.5)
    config.data = replace(config.data, test_ratio=0.3, max_workers=2)
    return config


@pytest.fixture
def corpus_dir(tmp_path) -> Path:
    """Eight short clips of varied content at 44.1 kHz plus one 48 kHz stereo file."""
    root = tmp_path / "corpus"
    rng = np.random.default_rng(0)
    for i in range(8):
        samples = tone(220.0 * (i + 1), 0.6) + 0.05 * rng.standard_normal(int(0.6 * SR)).astype(np.float32)
        write_wav(root / f"clip{i}.wav", samples)
    stereo = np.stack([tone(440.0, 0.6, 48000), tone(660.0, 0.6, 48000)], axis=1)
    write_wav(root / "nested" / "stereo.wav", stereo, 48000)
    return root
