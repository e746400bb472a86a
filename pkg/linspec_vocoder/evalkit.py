"""Objective realism harness: a ConvNeXt spectrogram classifier trained per negative-sample regime,
score tables and figures, and spectrogram images for listening/viewing studies."""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import csv
import hashlib
import logging
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from sklearn.metrics import roc_auc_score  # noqa: E402

from .config import ClassifierConfig, GlobalConfig, OptimConfig, ScheduleConfig, SpectralConfig  # noqa: E402
from .data import assign_split, load_wav, scalar_view  # noqa: E402
from .errors import DataError  # noqa: E402
from .models import RegimeSpec, ScoreCell, ScoreTable, Split, WaveformClip  # noqa: E402
from .spectral import SpectralFrontend, get_frontend, normalize_values  # noqa: E402
from .training import (  # noqa: E402
    BaseTrainer, EmaState, LrScheduleState, ProgressCallback, TrainState, _adamw, find_latest_checkpoint,
    load_inference_weights, step_seed,
)
from .vocos2d import ConvNeXt2DBlock  # noqa: E402

logger = logging.getLogger(__name__)

GT = "gt"
INPUT_KINDS = ("raw_log_magnitude", "linear_filterbank")
REGIMES: Dict[str, RegimeSpec] = {
    "mdctgan-only": RegimeSpec("mdctgan-only", ["mdctgan"]),
    "vocos-only": RegimeSpec("vocos-only", ["vocos"]),
    "both": RegimeSpec("both", ["mdctgan", "vocos"]),
    "lse-vocos2d-only": RegimeSpec("lse-vocos2d-only", ["lse_vocos2d"]),
}
SCORE_CSV_HEADER = ["method", "seen", "regime", "input_kind", "mean_score", "count"]
IMBALANCE_LIMIT = 10.0
DB_RANGE = 80.0

# Constant learning rate for the classifier
CLASSIFIER_SCHEDULE = ScheduleConfig(mode="exponential", decay_rate=1.0)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

class ChannelLayerNorm(nn.Module):
    """LayerNorm over the channel axis of [B, C, F, T]."""

    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.norm = nn.LayerNorm(dim, eps=eps)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(x.permute(0, 2, 3, 1)).permute(0, 3, 1, 2)


class ConvNeXtClassifier(nn.Module):
    """Single-channel spectrogram [B, bins, T] -> realism logit [B].

    Both axes are padded with each item's minimum to a multiple of the total downsampling,
    and pooling only covers the cells that hold real frames.
    """

    def __init__(self, cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg.validate()
        ratios, channels = cfg.downsampling_ratios, cfg.channels
        self.downsample = nn.ModuleList()
        for i, (ratio, dim) in enumerate(zip(ratios, channels)):
            if i == 0:
                layer = nn.Sequential(nn.Conv2d(1, dim, kernel_size=ratio, stride=ratio), ChannelLayerNorm(dim))
            else:
                layer = nn.Sequential(ChannelLayerNorm(channels[i - 1]),
                                      nn.Conv2d(channels[i - 1], dim, kernel_size=ratio, stride=ratio))
            self.downsample.append(layer)
        self.stages = nn.ModuleList([
            nn.ModuleList([ConvNeXt2DBlock(dim, 4 * dim, 1e-6) for _ in range(depth)])
            for depth, dim in zip(cfg.stage_blocks, channels)
        ])
        self.norm = nn.LayerNorm(channels[-1], eps=1e-6)
        self.head = nn.Linear(channels[-1], 1)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(m: nn.Module):
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.trunc_normal_(m.weight, std=0.02)
            nn.init.constant_(m.bias, 0)

    @property
    def total_downsampling(self) -> int:
        return self.cfg.total_downsampling

    def pad(self, x: torch.Tensor) -> torch.Tensor:
        multiple = self.total_downsampling
        pad_f = -x.shape[1] % multiple
        pad_t = -x.shape[2] % multiple
        if not (pad_f or pad_t):
            return x
        floor = x.amin(dim=(1, 2), keepdim=True)
        padded = F.pad(x, (0, pad_t, 0, pad_f))
        if pad_t:
            padded[:, :, x.shape[2]:] = floor
        if pad_f:
            padded[:, x.shape[1]:, :] = floor
        return padded

    def forward_features(self, x: torch.Tensor) -> torch.Tensor:
        """[B, bins, T] -> feature map [B, C, ceil(bins / 64), ceil(T / 64)]."""
        if x.dim() != 3:
            raise ValueError(f"expected [B, bins, T], got {tuple(x.shape)}")
        h = self.pad(x).unsqueeze(1)
        for downsample, stage in zip(self.downsample, self.stages):
            h = downsample(h)
            for block in stage:
                h = block(h)
        return h

    def forward(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        h = self.forward_features(x)
        multiple = self.total_downsampling
        rows = math.ceil(x.shape[1] / multiple)
        h = h[:, :, :rows]
        if lengths is None:
            cols = math.ceil(x.shape[2] / multiple)
            pooled = h[..., :cols].mean(dim=(2, 3))
        else:
            cols = torch.div(lengths + multiple - 1, multiple, rounding_mode="floor").clamp_min(1)
            mask = (torch.arange(h.shape[-1], device=h.device)[None, :] < cols[:, None]).to(h.dtype)
            pooled = (h * mask[:, None, None, :]).sum(dim=(2, 3)) / (rows * cols[:, None].to(h.dtype))
        return self.head(self.norm(pooled)).squeeze(-1)

    @torch.no_grad()
    def score(self, x: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        return torch.sigmoid(self.forward(x, lengths))


# ---------------------------------------------------------------------------
# Features and audio sets
# ---------------------------------------------------------------------------

def classifier_features(samples: torch.Tensor, kind: str, spectral: SpectralConfig,
                        frontend: Optional[SpectralFrontend] = None) -> torch.Tensor:
    """Normalized raw log STFT magnitudes or log linear filterbank energies, [..., bins, T]."""
    frontend = frontend or get_frontend(spectral)
    with torch.no_grad():
        if kind == "raw_log_magnitude":
            values = frontend.log_magnitude(samples)
        elif kind == "linear_filterbank":
            values = frontend.linear(samples)
        else:
            raise ValueError(f"unknown classifier input kind: {kind}")
    return normalize_values(values, scalar_view(spectral)).float()


def load_method_dir(directory: Union[str, Path], spectral: SpectralConfig) -> Dict[str, WaveformClip]:
    """WAV files keyed by clip id (the file stem)."""
    directory = Path(directory)
    if not directory.is_dir():
        return {}
    clips = {}
    for path in sorted(directory.glob("*.wav")):
        try:
            clips[path.stem] = load_wav(path, spectral)
        except Exception as e:
            logger.warning(f"Skipping unreadable audio {path}: {e}")
    return clips


def split_ids(ids: Sequence[str], split: Split, test_ratio: float, seed: int) -> List[str]:
    return [i for i in ids if assign_split(i, test_ratio, seed) == split.value]


@dataclass
class LabeledClips:
    """Featurized clips with binary labels (1 = real)."""

    features: List[torch.Tensor]
    labels: np.ndarray
    ids: List[str]

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if len(self.features) == 0:
            raise DataError("no labeled clips")

    @property
    def n_positive(self) -> int:
        return int(np.sum(self.labels == 1))

    @property
    def n_negative(self) -> int:
        return int(np.sum(self.labels == 0))

    def fingerprint(self) -> str:
        digest = hashlib.md5()
        for clip_id, label in zip(self.ids, self.labels):
            digest.update(f"{clip_id}:{int(label)};".encode("utf-8"))
        return digest.hexdigest()


def build_labeled_clips(methods: Dict[str, Dict[str, WaveformClip]], regime: RegimeSpec, kind: str,
                        config: GlobalConfig, split: Split = Split.TRAIN) -> LabeledClips:
    """GT clips as positives and the regime's negative methods as negatives, restricted to one split."""
    features, labels, ids = [], [], []
    ratio, seed = config.data.test_ratio, config.seed
    for method, label in [(m, 1) for m in regime.positives] + [(m, 0) for m in regime.negatives]:
        clips = methods.get(method, {})
        if not clips:
            logger.warning(f"No audio for method {method}; regime {regime.name} trains without it")
            continue
        for clip_id in split_ids(sorted(clips), split, ratio, seed):
            samples = torch.from_numpy(clips[clip_id].samples.astype(np.float64))
            features.append(classifier_features(samples, kind, config.spectral))
            labels.append(label)
            ids.append(f"{method}/{clip_id}")
    return LabeledClips(features=features, labels=np.asarray(labels, dtype=np.int64), ids=ids)


def crop_features(values: torch.Tensor, frames: int, rng: np.random.Generator) -> torch.Tensor:
    """Random fixed-length crop; short items are padded with their minimum."""
    total = values.shape[-1]
    if total >= frames:
        start = int(rng.integers(0, total - frames + 1))
        return values[..., start:start + frames]
    return F.pad(values, (0, frames - total), value=float(values.min()))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def classifier_config(config: GlobalConfig, kind: str) -> GlobalConfig:
    return replace(config, classifier=replace(config.classifier, input_kind=kind))


class ClassifierTrainer(BaseTrainer):
    """Binary cross-entropy on fixed-length crops."""

    stage = "classifier"

    def __init__(self, clips: LabeledClips, config: GlobalConfig, run_dir: Union[str, Path],
                 device: Union[str, torch.device] = "cpu", progress: Optional[ProgressCallback] = None):
        super().__init__(config, run_dir, device, progress)
        self.clips = clips
        self.crop_frames = int(round(config.classifier.crop_seconds * config.spectral.frames_per_second))
        n_pos, n_neg = clips.n_positive, clips.n_negative
        if n_pos == 0 or n_neg == 0:
            raise DataError(f"classifier needs both classes (got {n_pos} real, {n_neg} synthetic)")
        pos_weight = 1.0
        if max(n_pos, n_neg) / min(n_pos, n_neg) > IMBALANCE_LIMIT:
            pos_weight = n_neg / n_pos
            logger.warning(f"Class imbalance {n_pos}:{n_neg} exceeds {IMBALANCE_LIMIT:.0f}:1; "
                           f"reweighting positives by {pos_weight:.3f}")
        self.criterion = nn.BCEWithLogitsLoss(pos_weight=torch.tensor(pos_weight, device=self.device))

    @property
    def optim(self) -> OptimConfig:
        return self.config.optim_classifier

    @property
    def schedule_config(self) -> ScheduleConfig:
        return CLASSIFIER_SCHEDULE

    def build_state(self) -> TrainState:
        torch.manual_seed(self.config.seed)
        model = ConvNeXtClassifier(self.config.classifier).to(self.device)
        return TrainState(
            stage=self.stage,
            step=0,
            model=model,
            optimizer=_adamw(model.parameters(), self.optim),
            schedule=LrScheduleState.from_config(self.schedule_config, self.optim.lr_init),
            ema=EmaState.from_model(model, self.optim.ema_decay),
            seed=self.config.seed,
            config_fingerprint=self.config.fingerprint_for(self.stage),
            corpus_fingerprint=self.clips.fingerprint(),
        )

    def batch(self, step: int) -> Tuple[torch.Tensor, torch.Tensor]:
        rng = np.random.default_rng(step_seed(self.config.seed, step))
        index = rng.integers(0, len(self.clips.labels), size=self.optim.batch_size)
        x = torch.stack([crop_features(self.clips.features[i], self.crop_frames, rng) for i in index])
        y = torch.from_numpy(self.clips.labels[index].astype(np.float32))
        return x.to(self.device), y.to(self.device)

    def train_step(self, state: TrainState) -> Dict[str, float]:
        x, y = self.batch(state.step + 1)
        state.model.train()
        state.optimizer.zero_grad(set_to_none=True)
        loss = self.criterion(state.model(x), y)
        loss.backward()
        state.optimizer.step()
        return {"loss": float(loss)}


def train_classifier(clips: LabeledClips, config: GlobalConfig, run_dir: Union[str, Path],
                     steps: Optional[int] = None, device: Union[str, torch.device] = "cpu",
                     progress: Optional[ProgressCallback] = None) -> ConvNeXtClassifier:
    state = ClassifierTrainer(clips, config, run_dir, device, progress).fit(steps or config.optim_classifier.steps)
    state.model.eval()
    return state.model


def classifier_run_dir(checkpoint_root: Union[str, Path], regime: str, kind: str) -> Path:
    return Path(checkpoint_root) / f"classifier-{regime}-{kind}"


def load_classifier(run_dir: Path, config: GlobalConfig, device: Union[str, torch.device] = "cpu"
                    ) -> Optional[ConvNeXtClassifier]:
    latest = find_latest_checkpoint(run_dir)
    if latest is None:
        return None
    model = ConvNeXtClassifier(config.classifier).to(device)
    load_inference_weights(model, latest, "classifier", config, use_ema=False)
    return model


@torch.no_grad()
def score_clips(model: ConvNeXtClassifier, features: Sequence[torch.Tensor]) -> np.ndarray:
    model.eval()
    device = next(model.parameters()).device
    return np.array([float(model.score(f.unsqueeze(0).to(device))[0]) for f in features])


def classifier_auc(model: ConvNeXtClassifier, clips: LabeledClips) -> float:
    return float(roc_auc_score(clips.labels, score_clips(model, clips.features)))


# ---------------------------------------------------------------------------
# Regime evaluation
# ---------------------------------------------------------------------------

def evaluate_regimes(methods: Dict[str, Dict[str, WaveformClip]], config: GlobalConfig,
                     checkpoint_root: Union[str, Path], regimes: Optional[Sequence[str]] = None,
                     input_kinds: Sequence[str] = INPUT_KINDS, device: Union[str, torch.device] = "cpu",
                     on_classifier: Optional[Callable[[str, str], None]] = None) -> ScoreTable:
    """Train (or reuse) one classifier per regime and input kind and score every method's test clips."""
    if not methods.get(GT):
        raise DataError("evaluation needs ground-truth audio under the method name 'gt'")
    names = list(regimes or REGIMES)
    unknown = [n for n in names if n not in REGIMES]
    if unknown:
        raise ValueError(f"unknown regime(s): {', '.join(unknown)}; choose from {', '.join(REGIMES)}")

    ratio, seed = config.data.test_ratio, config.seed
    table = ScoreTable()
    for name in names:
        regime = REGIMES[name]
        if not any(methods.get(m) for m in regime.negatives):
            logger.warning(f"Regime {name}: no audio for {', '.join(regime.negatives)}; regime skipped")
            continue
        for kind in input_kinds:
            kind_config = classifier_config(config, kind)
            run_dir = classifier_run_dir(checkpoint_root, name, kind)
            model = load_classifier(run_dir, kind_config, device)
            if model is None:
                logger.info(f"Training classifier for regime {name} on {kind}")
                model = train_classifier(build_labeled_clips(methods, regime, kind, kind_config), kind_config,
                                         run_dir, device=device)
            for method, clips in methods.items():
                test_ids = split_ids(sorted(clips), Split.TEST, ratio, seed)
                if not test_ids:
                    logger.warning(f"Method {method} has no held-out clips; row omitted")
                    continue
                features = [
                    classifier_features(torch.from_numpy(clips[i].samples.astype(np.float64)), kind, config.spectral)
                    for i in test_ids
                ]
                scores = score_clips(model, features)
                seen = method in regime.positives or method in regime.negatives
                table.add(ScoreCell(method=method, seen=seen, regime=name, input_kind=kind,
                                    mean_score=float(np.mean(scores)), count=len(scores),
                                    std=float(np.std(scores))))
            if on_classifier is not None:
                on_classifier(name, kind)
    return table


def write_score_csv(table: ScoreTable, path: Union[str, Path]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCORE_CSV_HEADER)
        for cell in table.cells:
            writer.writerow([cell.method, str(cell.seen).lower(), cell.regime, cell.input_kind,
                             f"{cell.mean_score:.6f}", cell.count])


def read_score_csv(path: Union[str, Path]) -> ScoreTable:
    table = ScoreTable()
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            table.add(ScoreCell(method=row["method"], seen=row["seen"] == "true", regime=row["regime"],
                                input_kind=row["input_kind"], mean_score=float(row["mean_score"]),
                                count=int(row["count"])))
    return table


def score_matrix(table: ScoreTable) -> Tuple[np.ndarray, List[str], List[Tuple[str, str]]]:
    """Methods x (regime, input kind) mean scores; NaN where a cell is missing."""
    methods, columns = table.methods, table.columns
    matrix = np.full((len(methods), len(columns)), np.nan)
    for r, method in enumerate(methods):
        for c, (regime, kind) in enumerate(columns):
            cell = table.get(method, regime, kind)
            if cell is not None:
                matrix[r, c] = cell.mean_score
    return matrix, methods, columns


def render_score_figure(table: ScoreTable, path: Union[str, Path]) -> Path:
    """Heatmap of mean scores, one column per classifier."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix, methods, columns = score_matrix(table)
    fig, ax = plt.subplots(figsize=(1.2 * len(columns) + 2, 0.5 * len(methods) + 1.5))
    image = ax.imshow(matrix, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(columns)))
    ax.set_xticklabels([f"{r}\n{k}" for r, k in columns], fontsize=7)
    ax.set_yticks(range(len(methods)))
    ax.set_yticklabels(methods)
    for r in range(len(methods)):
        for c in range(len(columns)):
            if not np.isnan(matrix[r, c]):
                ax.text(c, r, f"{matrix[r, c]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if matrix[r, c] < 0.5 else "black")
    fig.colorbar(image, ax=ax, label="mean realism score")
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    return path


# ---------------------------------------------------------------------------
# Spectrogram images
# ---------------------------------------------------------------------------

def spectrogram_db(w: WaveformClip, spectral: SpectralConfig) -> np.ndarray:
    """STFT magnitude in dB relative to the clip peak, clipped to [-80, 0]; [n_freq_bins, T]."""
    frontend = get_frontend(spectral)
    with torch.no_grad():
        mag = frontend.magnitude(frontend.stft(torch.from_numpy(w.samples.astype(np.float64)))).numpy()
    floor = spectral.amplitude_floor
    reference = max(float(mag.max()), floor * 10 ** (DB_RANGE / 20))
    db = 20.0 * np.log10(np.maximum(mag, floor) / reference)
    return np.clip(db, -DB_RANGE, 0.0)


def tone_row(frequency: float, spectral: SpectralConfig) -> int:
    """Pixel row (from the top) of a frequency in a rendered image."""
    bin_index = int(round(frequency * spectral.fft_size / spectral.sample_rate))
    return spectral.n_freq_bins - 1 - bin_index


def render_spectrogram_image(w: WaveformClip, out_path: Union[str, Path], spectral: SpectralConfig) -> Path:
    """One pixel per frame and per STFT bin, 0 Hz at the bottom, magma colours over [-80, 0] dB."""
    if w.sample_rate != spectral.sample_rate:
        raise ValueError(f"clip is {w.sample_rate} Hz but the configuration expects {spectral.sample_rate} Hz")
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        plt.imsave(out_path, spectrogram_db(w, spectral), cmap="magma", vmin=-DB_RANGE, vmax=0.0,
                   origin="lower", format="png", metadata={"Software": None})
    except OSError as e:
        raise DataError(f"Could not write {out_path}: {e}") from e
    return out_path


def render_directory(wav_dir: Union[str, Path], png_dir: Union[str, Path], spectral: SpectralConfig,
                     on_item: Optional[Callable[[str], None]] = None) -> List[Path]:
    wav_dir, png_dir = Path(wav_dir), Path(png_dir)
    paths = sorted(wav_dir.glob("*.wav"))
    if not paths:
        raise DataError(f"no audio found in {wav_dir}")
    written = []
    for path in paths:
        written.append(render_spectrogram_image(load_wav(path, spectral), png_dir / f"{path.stem}.png", spectral))
        if on_item is not None:
            on_item(path.name)
    logger.info(f"Rendered {len(written)} spectrogram images into {png_dir}")
    return written
