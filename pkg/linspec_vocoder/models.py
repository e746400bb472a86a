"""Data records passed between the pipeline stages."""

from dataclasses import dataclass, field
from typing import Optional, List, Dict, Tuple
from enum import Enum

import numpy as np


class FeatureKind(Enum):
    MEL = "mel"
    LINEAR = "linear"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class WaveformClip:
    """Mono audio, the raw I/O unit."""

    samples: np.ndarray
    sample_rate: int = 44100

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise ValueError(f"WaveformClip expects mono samples, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("WaveformClip contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Spectrogram:
    """Log filterbank magnitudes, bins x frames."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError(f"spectrogram values must be [bins x T] with T >= 1, got {self.values.shape}")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MelSpec(Spectrogram):
    """Slaney mel spectrogram (the vocoder/LSE condition)."""

    kind = FeatureKind.MEL


@dataclass
class LinearSpec(Spectrogram):
    """Full-bandwidth linear filterbank spectrogram (the LSE target)."""

    kind = FeatureKind.LINEAR


@dataclass
class ComplexSpec:
    """One-sided STFT, (fft_size/2+1) x T complex values."""

    values: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.values.shape[-1]


@dataclass
class ManifestEntry:
    """One ingested clip."""

    id: str
    source_path: str
    duration_s: float
    sample_rate_original: int
    split: str = Split.TRAIN.value

    def to_json(self) -> Dict[str, object]:
        return {
            "id": self.id,
            "source_path": self.source_path,
            "duration_s": self.duration_s,
            "sample_rate_original": self.sample_rate_original,
            "split": self.split,
        }


@dataclass
class FeatureCacheRecord:
    """A cached spectrogram with the fingerprint of the config that produced it."""

    id: str
    feature_kind: FeatureKind
    values: np.ndarray
    fingerprint: bytes

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.values.shape)


@dataclass
class GanLossReport:
    """Scalar view of one vocoder step's losses."""

    adversarial: float
    feature_matching: float
    spectral_l1: float
    total: float
    discriminator_loss: float

    def as_dict(self) -> Dict[str, float]:
        return {
            "adversarial": self.adversarial,
            "feature_matching": self.feature_matching,
            "spectral_l1": self.spectral_l1,
            "total": self.total,
            "discriminator_loss": self.discriminator_loss,
        }


@dataclass
class RegimeSpec:
    """Which synthetic methods a realism classifier sees as negatives."""

    name: str
    negatives: List[str]
    positives: List[str] = field(default_factory=lambda: ["gt"])


@dataclass
class ScoreCell:
    method: str
    seen: bool
    regime: str
    input_kind: str
    mean_score: float
    count: int
    std: float = 0.0


@dataclass
class ScoreTable:
    """Mean classifier score per (method, regime, input kind)."""

    cells: List[ScoreCell] = field(default_factory=list)

    def add(self, cell: ScoreCell):
        if not 0.0 <= cell.mean_score <= 1.0:
            raise ValueError(f"score {cell.mean_score} outside [0, 1]")
        self.cells.append(cell)

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(c.method for c in self.cells))

    @property
    def columns(self) -> List[Tuple[str, str]]:
        return list(dict.fromkeys((c.regime, c.input_kind) for c in self.cells))

    def get(self, method: str, regime: str, input_kind: str) -> Optional[ScoreCell]:
        for cell in self.cells:
            if cell.method == method and cell.regime == regime and cell.input_kind == input_kind:
                return cell
        return None


@dataclass
class QualityScore:
    """Aggregated external quality score for one method."""

    method: str
    provider: str
    mean: float
    ci95: float
    count: int
