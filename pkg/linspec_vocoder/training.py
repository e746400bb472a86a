"""Training loops for the LSE denoiser and the GAN vocoders, with EMA, LR schedules and checkpoints.

Checkpoint layout (one directory per checkpoint):

    config.json    the configuration sections the stage depends on
    weights.bin    named little-endian arrays (see write_weights)
    metadata.json  step, lr, EMA decay, fingerprints, optimizer and schedule state
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import csv
import hashlib
import json
import logging
import math
import os
import shutil
import struct
import tempfile

import numpy as np
import torch
from torch import nn

from .config import GlobalConfig, OptimConfig, ScheduleConfig, diff_manifests
from .diffusion import NoiseSchedule, training_loss
from .errors import CheckpointMismatchError, DataError, DivergenceError
from .lse_net import LseNet
from .spectral import SpectralFrontend
from .vocos2d import (
    BaselineVocosGenerator, GanCriterion, MultiResolutionDiscriminator, Vocos2DGenerator, draw_augmentation,
)

logger = logging.getLogger(__name__)

# Per-step seeds: seed * SEED_STRIDE + step
SEED_STRIDE = 1_000_003

WEIGHTS_MAGIC = b"LSECKPT1"
_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("float16"): 2,
    np.dtype("int64"): 3,
    np.dtype("int32"): 4,
    np.dtype("bool"): 5,
    np.dtype("uint8"): 6,
}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}

ProgressCallback = Callable[[int, int, float], None]


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def _split_fixed(length: int, size: int) -> List[Tuple[int, int]]:
    """(start, stop) windows of `size`; a tail shorter than half a window is dropped."""
    windows = [(start, start + size) for start in range(0, length - size + 1, size)]
    tail = length - len(windows) * size
    if tail > 0 and tail * 2 >= size:
        windows.append((len(windows) * size, length))
    return windows


def segment_clips(clips: Sequence[np.ndarray], seconds: float, sample_rate: int = 44100) -> List[np.ndarray]:
    """Non-overlapping fixed-length segments, silence-padded at the tail."""
    if len(clips) == 0:
        raise DataError("cannot segment an empty corpus")
    size = int(round(seconds * sample_rate))
    segments = []
    for clip in clips:
        clip = np.asarray(clip, dtype=np.float32)
        for start, stop in _split_fixed(len(clip), size):
            piece = clip[start:stop]
            if len(piece) < size:
                piece = np.pad(piece, (0, size - len(piece)))
            segments.append(piece)
    return segments


def segment_frames(values: np.ndarray, frames: int, pad_value: Union[float, np.ndarray]) -> List[np.ndarray]:
    """Same rule as segment_clips over the frame axis of a [bins x T] spectrogram.

    pad_value is a scalar or one value per bin.
    """
    fill = np.asarray(pad_value, dtype=values.dtype).reshape(-1, 1)
    if fill.shape[0] not in (1, values.shape[0]):
        raise ValueError(f"pad value has {fill.shape[0]} bins, spectrogram has {values.shape[0]}")
    segments = []
    for start, stop in _split_fixed(values.shape[1], frames):
        piece = values[:, start:stop]
        if piece.shape[1] < frames:
            tail = np.broadcast_to(fill, (values.shape[0], frames - piece.shape[1]))
            piece = np.concatenate([piece, tail], axis=1)
        segments.append(piece)
    return segments


@dataclass
class LseCorpus:
    """Paired normalized segments for the denoiser."""

    linear: np.ndarray  # [N, n_linear, frames]
    mel: np.ndarray  # [N, n_mel, frames]
    fingerprint: str = ""

    def __post_init__(self):
        if len(self.linear) == 0:
            raise DataError("LSE corpus is empty")
        if self.linear.shape[0] != self.mel.shape[0] or self.linear.shape[2] != self.mel.shape[2]:
            raise DataError(f"linear {self.linear.shape} and mel {self.mel.shape} segments are not aligned")
        if not self.fingerprint:
            self.fingerprint = _array_fingerprint(self.linear, self.mel)


@dataclass
class AudioCorpus:
    """Fixed-length waveform segments for the vocoders."""

    segments: np.ndarray  # [N, samples]
    fingerprint: str = ""

    def __post_init__(self):
        if len(self.segments) == 0:
            raise DataError("vocoder corpus is empty")
        if not self.fingerprint:
            self.fingerprint = _array_fingerprint(self.segments)


def _array_fingerprint(*arrays: np.ndarray) -> str:
    digest = hashlib.md5()
    for array in arrays:
        digest.update(np.ascontiguousarray(array, dtype=np.float32).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# EMA and learning-rate schedules
# ---------------------------------------------------------------------------

class EmaState:
    """Shadow copy of a model's weights."""

    def __init__(self, decay: float, shadow: Dict[str, torch.Tensor], step: int = 0):
        if not 0.0 <= decay <= 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1], got {decay}")
        self.decay = decay
        self.shadow = shadow
        self.step = step

    @classmethod
    def from_model(cls, model: nn.Module, decay: float) -> "EmaState":
        return cls(decay, {k: v.detach().clone() for k, v in model.state_dict().items()})

    def copy_to(self, model: nn.Module):
        model.load_state_dict(self.shadow)


def ema_update(ema: EmaState, weights: Union[nn.Module, Dict[str, torch.Tensor]]) -> EmaState:
    """shadow <- decay * shadow + (1 - decay) * weights for floating tensors; others are copied."""
    current = weights.state_dict() if isinstance(weights, nn.Module) else weights
    if set(current) != set(ema.shadow):
        raise ValueError("EMA shadow and weights have different entries")
    with torch.no_grad():
        for name, value in current.items():
            shadow = ema.shadow[name]
            if shadow.shape != value.shape:
                raise ValueError(f"EMA shape mismatch for {name}: {tuple(shadow.shape)} vs {tuple(value.shape)}")
            if shadow.is_floating_point():
                shadow.mul_(ema.decay).add_(value.detach().to(shadow.dtype), alpha=1.0 - ema.decay)
            else:
                shadow.copy_(value)
    ema.step += 1
    return ema


@dataclass
class LrScheduleState:
    mode: str
    lr: float
    lr_init: float
    window: int = 150_000
    decay_rate: float = 0.995
    decay_interval: int = 1000
    smoothing_half_life: int = 1000
    best_loss: float = math.inf
    steps_since_best: int = 0
    smoothed_loss: Optional[float] = None
    halvings: int = 0

    @classmethod
    def from_config(cls, cfg: ScheduleConfig, lr_init: float) -> "LrScheduleState":
        cfg.validate()
        return cls(mode=cfg.mode, lr=lr_init, lr_init=lr_init, window=cfg.window, decay_rate=cfg.decay_rate,
                   decay_interval=cfg.decay_interval, smoothing_half_life=cfg.smoothing_half_life)

    def observe(self, step: int, loss: float) -> float:
        """Advance the schedule after `step` (1-based count of completed steps); returns the new lr."""
        if self.mode == "plateau_halving":
            plateau_halve(self, loss)
        else:
            self.lr = exponential_lr(self, step)
        return self.lr


def plateau_halve(state: LrScheduleState, loss: float) -> LrScheduleState:
    """Halve lr after `window` consecutive steps without a new minimum of the smoothed loss."""
    if state.smoothed_loss is None or state.smoothing_half_life <= 0:
        state.smoothed_loss = float(loss)
    else:
        keep = 0.5 ** (1.0 / state.smoothing_half_life)
        state.smoothed_loss = keep * state.smoothed_loss + (1.0 - keep) * float(loss)

    if state.smoothed_loss < state.best_loss:
        state.best_loss = state.smoothed_loss
        state.steps_since_best = 0
        return state

    state.steps_since_best += 1
    if state.steps_since_best >= state.window:
        state.lr *= 0.5
        state.halvings += 1
        state.steps_since_best = 0
        logger.info(f"Loss plateaued for {state.window} steps, halving lr to {state.lr:.3e}")
    return state


def exponential_lr(state: LrScheduleState, step: int) -> float:
    return state.lr_init * state.decay_rate ** (step // state.decay_interval)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

def write_weights(path: Path, tensors: Dict[str, torch.Tensor]):
    """Named arrays, sorted by name.

    magic "LSECKPT1", uint32 count, then per entry: uint16 name length, utf-8 name,
    uint8 dtype code, uint8 ndim, uint32 dims, uint64 payload bytes, little-endian payload.
    """
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            array = tensors[name].detach().cpu().numpy()
            if array.dtype not in _DTYPE_CODES:
                raise ValueError(f"unsupported dtype {array.dtype} for checkpoint entry {name}")
            payload = np.ascontiguousarray(array.astype(array.dtype.newbyteorder("<"))).tobytes()
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _DTYPE_CODES[array.dtype], array.ndim))
            f.write(struct.pack(f"<{array.ndim}I", *array.shape))
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)


def read_weights(path: Path) -> Dict[str, torch.Tensor]:
    data = Path(path).read_bytes()
    if data[:8] != WEIGHTS_MAGIC:
        raise DataError(f"{path} is not a checkpoint weights file")
    offset = 8
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        code, ndim = struct.unpack_from("<BB", data, offset)
        offset += 2
        dims = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        (n_bytes,) = struct.unpack_from("<Q", data, offset)
        offset += 8
        dtype = _CODE_DTYPES[code]
        array = np.frombuffer(data, dtype=dtype.newbyteorder("<"), count=n_bytes // dtype.itemsize, offset=offset)
        offset += n_bytes
        tensors[name] = torch.from_numpy(array.astype(dtype).reshape(dims))
    return tensors


@dataclass
class Checkpoint:
    manifest: Dict[str, object]
    tensors: Dict[str, torch.Tensor]
    metadata: Dict[str, object]


def _dump_json(path: Path, payload: Dict[str, object]):
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def save_checkpoint(directory: Path, manifest: Dict[str, object], tensors: Dict[str, torch.Tensor],
                    metadata: Dict[str, object]) -> Path:
    """Write into a temporary sibling directory, then rename into place."""
    directory = Path(directory)
    directory.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{directory.name}.", dir=directory.parent))
    try:
        _dump_json(tmp / "config.json", manifest)
        write_weights(tmp / "weights.bin", tensors)
        _dump_json(tmp / "metadata.json", metadata)
        if directory.exists():
            old = directory.with_name(f".{directory.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            os.replace(directory, old)
            os.replace(tmp, directory)
            shutil.rmtree(old, ignore_errors=True)
        else:
            os.replace(tmp, directory)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    logger.info(f"Checkpoint written: {directory}")
    return directory


def load_checkpoint(directory: Path) -> Checkpoint:
    directory = Path(directory)
    if not (directory / "weights.bin").exists():
        raise DataError(f"No checkpoint found at {directory}")
    return Checkpoint(
        manifest=json.loads((directory / "config.json").read_text(encoding="utf-8")),
        tensors=read_weights(directory / "weights.bin"),
        metadata=json.loads((directory / "metadata.json").read_text(encoding="utf-8")),
    )


def verify_manifest(saved: Dict[str, object], active: Dict[str, object], where: Union[str, Path] = ""):
    differences = diff_manifests(saved, active)
    if differences:
        raise CheckpointMismatchError(
            f"Checkpoint {where} was trained under a different configuration:\n  " + "\n  ".join(differences),
            differences,
        )


def checkpoint_name(step: int) -> str:
    return f"step-{step:08d}"


def find_latest_checkpoint(run_dir: Path) -> Optional[Path]:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        return None
    candidates = sorted(p for p in run_dir.glob("step-*") if (p / "weights.bin").exists())
    return candidates[-1] if candidates else None


def _prefixed(prefix: str, tensors: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v for k, v in tensors.items()}


def _strip(prefix: str, tensors: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    head = prefix + "."
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}


def _optimizer_tensors(prefix: str, optimizer: torch.optim.Optimizer) -> Dict[str, torch.Tensor]:
    out = {}
    for index, entry in optimizer.state_dict()["state"].items():
        for key, value in entry.items():
            out[f"{prefix}.state.{index}.{key}"] = torch.as_tensor(value)
    return out


def _restore_optimizer(optimizer: torch.optim.Optimizer, prefix: str, tensors: Dict[str, torch.Tensor],
                       param_groups: List[Dict[str, object]]):
    state: Dict[int, Dict[str, torch.Tensor]] = {}
    for key, value in _strip(f"{prefix}.state", tensors).items():
        index, name = key.split(".", 1)
        state.setdefault(int(index), {})[name] = value
    optimizer.load_state_dict({"state": state, "param_groups": param_groups})


def load_inference_weights(model: nn.Module, directory: Path, stage: str, config: GlobalConfig,
                           use_ema: bool = True) -> Dict[str, object]:
    """Load (EMA) weights from a checkpoint after checking its configuration."""
    checkpoint = load_checkpoint(directory)
    verify_manifest(checkpoint.manifest, config.stage_manifest(stage), directory)
    weights = _strip("ema" if use_ema else "model", checkpoint.tensors)
    model.load_state_dict(weights)
    model.eval()
    return checkpoint.metadata


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    stage: str
    step: int
    model: nn.Module
    optimizer: torch.optim.Optimizer
    schedule: LrScheduleState
    ema: EmaState
    seed: int
    config_fingerprint: str
    corpus_fingerprint: str
    discriminator: Optional[nn.Module] = None
    d_optimizer: Optional[torch.optim.Optimizer] = None
    scaler: Optional[torch.cuda.amp.GradScaler] = None
    history: List[Dict[str, float]] = field(default_factory=list)
    update_log: List[str] = field(default_factory=list)

    def tensors(self) -> Dict[str, torch.Tensor]:
        out = _prefixed("model", self.model.state_dict())
        out.update(_prefixed("ema", self.ema.shadow))
        out.update(_optimizer_tensors("optim", self.optimizer))
        if self.discriminator is not None:
            out.update(_prefixed("disc", self.discriminator.state_dict()))
            out.update(_optimizer_tensors("disc_optim", self.d_optimizer))
        return out

    def metadata(self) -> Dict[str, object]:
        meta = {
            "stage": self.stage,
            "step": self.step,
            "lr": self.schedule.lr,
            "ema_decay": self.ema.decay,
            "ema_step": self.ema.step,
            "seed": self.seed,
            "config_fingerprint": self.config_fingerprint,
            "corpus_fingerprint": self.corpus_fingerprint,
            "schedule": asdict(self.schedule),
            "optim_param_groups": self.optimizer.state_dict()["param_groups"],
        }
        if self.d_optimizer is not None:
            meta["disc_optim_param_groups"] = self.d_optimizer.state_dict()["param_groups"]
        if self.scaler is not None and self.scaler.is_enabled():
            meta["grad_scaler"] = self.scaler.state_dict()
        return meta


def step_seed(seed: int, step: int) -> int:
    return seed * SEED_STRIDE + step


def _set_lr(optimizer: Optional[torch.optim.Optimizer], lr: float):
    if optimizer is None:
        return
    for group in optimizer.param_groups:
        group["lr"] = lr


def _adamw(params, optim: OptimConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(params, lr=optim.lr_init, betas=tuple(optim.betas),
                             weight_decay=optim.weight_decay, eps=optim.eps)


class BaseTrainer(ABC):
    """Shared loop: step, schedule, EMA, loss log, periodic and diagnostic checkpoints."""

    stage: str = ""

    def __init__(self, config: GlobalConfig, run_dir: Union[str, Path], device: Union[str, torch.device] = "cpu",
                 progress: Optional[ProgressCallback] = None):
        self.config = config
        self.run_dir = Path(run_dir)
        self.device = torch.device(device)
        self.progress = progress

    @property
    @abstractmethod
    def optim(self) -> OptimConfig:
        pass

    @property
    @abstractmethod
    def schedule_config(self) -> ScheduleConfig:
        pass

    @abstractmethod
    def build_state(self) -> TrainState:
        pass

    @abstractmethod
    def train_step(self, state: TrainState) -> Dict[str, float]:
        """Run update number state.step + 1; returns at least {"loss": ...}."""

    @property
    def log_path(self) -> Path:
        return self.run_dir / "loss.csv"

    def save(self, state: TrainState, name: Optional[str] = None) -> Path:
        return save_checkpoint(self.run_dir / (name or checkpoint_name(state.step)),
                               self.config.stage_manifest(self.stage), state.tensors(), state.metadata())

    def restore(self, state: TrainState, directory: Path) -> TrainState:
        checkpoint = load_checkpoint(directory)
        verify_manifest(checkpoint.manifest, self.config.stage_manifest(self.stage), directory)
        meta = checkpoint.metadata
        state.model.load_state_dict(_strip("model", checkpoint.tensors))
        state.ema = EmaState(float(meta["ema_decay"]),
                             {k: v.to(self.device) for k, v in _strip("ema", checkpoint.tensors).items()},
                             int(meta["ema_step"]))
        _restore_optimizer(state.optimizer, "optim", checkpoint.tensors, meta["optim_param_groups"])
        if state.discriminator is not None:
            state.discriminator.load_state_dict(_strip("disc", checkpoint.tensors))
            _restore_optimizer(state.d_optimizer, "disc_optim", checkpoint.tensors, meta["disc_optim_param_groups"])
        if state.scaler is not None and "grad_scaler" in meta:
            state.scaler.load_state_dict(meta["grad_scaler"])
        state.schedule = LrScheduleState(**meta["schedule"])
        state.step = int(meta["step"])
        if meta.get("corpus_fingerprint") != state.corpus_fingerprint:
            logger.warning(f"Resuming {directory} on a different corpus than it was trained on")
        logger.info(f"Resumed {self.stage} from {directory} at step {state.step}")
        return state

    def _open_log(self, resume_step: int):
        """Start a fresh log, or keep only rows up to the resumed step."""
        self.run_dir.mkdir(parents=True, exist_ok=True)
        rows = []
        if resume_step > 0 and self.log_path.exists():
            with open(self.log_path, newline="") as f:
                rows = [r for r in csv.DictReader(f) if int(r["step"]) <= resume_step]
        with open(self.log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss", "lr"])
            for r in rows:
                writer.writerow([r["step"], r["loss"], r["lr"]])

    def _append_log(self, step: int, loss: float, lr: float):
        with open(self.log_path, "a", newline="") as f:
            csv.writer(f).writerow([step, repr(loss), repr(lr)])

    def fit(self, steps: int, resume: bool = False) -> TrainState:
        """Train until `steps` updates have been made in total."""
        state = self.build_state()
        if resume:
            latest = find_latest_checkpoint(self.run_dir)
            if latest is None:
                raise DataError(f"--resume given but no checkpoint exists under {self.run_dir}")
            state = self.restore(state, latest)
        self._open_log(state.step)
        logger.info(f"Training {self.stage} from step {state.step} to {steps}")

        while state.step < steps:
            metrics = self.train_step(state)
            loss = metrics["loss"]
            if not math.isfinite(loss):
                state.step += 1
                self.save(state, f"diagnostic-{checkpoint_name(state.step)}")
                raise DivergenceError(f"{self.stage} loss became {loss} at step {state.step}")
            state.step += 1
            lr = state.schedule.observe(state.step, loss)
            _set_lr(state.optimizer, lr)
            _set_lr(state.d_optimizer, lr)
            ema_update(state.ema, state.model)
            state.history.append({"step": state.step, "lr": lr, **metrics})
            self._append_log(state.step, loss, lr)
            if self.progress is not None:
                self.progress(state.step, steps, loss)
            if state.step % self.optim.checkpoint_every == 0 or state.step == steps:
                self.save(state)
        return state


class LseTrainer(BaseTrainer):
    """Epsilon-prediction training on paired normalized segments."""

    stage = "lse"

    def __init__(self, corpus: LseCorpus, config: GlobalConfig, run_dir: Union[str, Path],
                 device: Union[str, torch.device] = "cpu", progress: Optional[ProgressCallback] = None):
        super().__init__(config, run_dir, device, progress)
        self.corpus = corpus
        self.noise_schedule = NoiseSchedule.from_config(config.diffusion)
        self.use_amp = config.optim_lse.precision == "fp16" and self.device.type == "cuda"
        if config.optim_lse.precision == "fp16" and not self.use_amp:
            logger.warning("fp16 requested but CUDA is unavailable; training LSE in fp32")

    @property
    def optim(self) -> OptimConfig:
        return self.config.optim_lse

    @property
    def schedule_config(self) -> ScheduleConfig:
        return self.config.schedule_lse

    def build_state(self) -> TrainState:
        torch.manual_seed(self.config.seed)
        model = LseNet(self.config.lse).to(self.device)
        return TrainState(
            stage=self.stage,
            step=0,
            model=model,
            optimizer=_adamw(model.parameters(), self.optim),
            schedule=LrScheduleState.from_config(self.schedule_config, self.optim.lr_init),
            ema=EmaState.from_model(model, self.optim.ema_decay),
            seed=self.config.seed,
            config_fingerprint=self.config.fingerprint_for(self.stage),
            corpus_fingerprint=self.corpus.fingerprint,
            scaler=torch.cuda.amp.GradScaler(enabled=self.use_amp),
        )

    def batch(self, step: int) -> Tuple[torch.Tensor, torch.Tensor]:
        rng = np.random.default_rng(step_seed(self.config.seed, step))
        index = rng.integers(0, len(self.corpus.linear), size=self.optim.batch_size)
        x0 = torch.from_numpy(self.corpus.linear[index].astype(np.float32)).to(self.device)
        c = torch.from_numpy(self.corpus.mel[index].astype(np.float32)).to(self.device)
        return x0, c

    def train_step(self, state: TrainState) -> Dict[str, float]:
        step = state.step + 1
        x0, c = self.batch(step)
        generator = torch.Generator(device=self.device).manual_seed(step_seed(state.seed, step))
        state.model.train()
        state.optimizer.zero_grad(set_to_none=True)
        with torch.autocast(device_type=self.device.type, dtype=torch.float16, enabled=self.use_amp):
            loss = training_loss(state.model, x0, c, self.noise_schedule, generator)
        if torch.isfinite(loss):
            state.scaler.scale(loss).backward()
            state.scaler.step(state.optimizer)
            state.scaler.update()
        return {"loss": float(loss)}


class VocoderTrainer(BaseTrainer):
    """Alternating discriminator/generator updates with augmentation before every discriminator call."""

    def __init__(self, corpus: AudioCorpus, config: GlobalConfig, stage: str, run_dir: Union[str, Path],
                 device: Union[str, torch.device] = "cpu", progress: Optional[ProgressCallback] = None):
        super().__init__(config, run_dir, device, progress)
        if stage not in ("vocos2d", "vocos-baseline"):
            raise ValueError(f"not a vocoder stage: {stage}")
        self.stage = stage
        self.corpus = corpus
        self.input_kind = config.vocos2d.input_kind if stage == "vocos2d" else config.vocos.input_kind
        self.frontend = SpectralFrontend(config.spectral).to(self.device)

    @property
    def optim(self) -> OptimConfig:
        return self.config.optim_vocoder

    @property
    def schedule_config(self) -> ScheduleConfig:
        return self.config.schedule_vocoder

    def build_state(self) -> TrainState:
        torch.manual_seed(self.config.seed)
        generator = build_generator(self.stage, self.config).to(self.device)
        discriminator = MultiResolutionDiscriminator(self.config.discriminator).to(self.device)
        self.criterion = GanCriterion(discriminator, self.config.spectral, self.config.loss_weights).to(self.device)
        return TrainState(
            stage=self.stage,
            step=0,
            model=generator,
            optimizer=_adamw(generator.parameters(), self.optim),
            schedule=LrScheduleState.from_config(self.schedule_config, self.optim.lr_init),
            ema=EmaState.from_model(generator, self.optim.ema_decay),
            seed=self.config.seed,
            config_fingerprint=self.config.fingerprint_for(self.stage),
            corpus_fingerprint=self.corpus.fingerprint,
            discriminator=discriminator,
            d_optimizer=_adamw(discriminator.parameters(), self.optim),
        )

    def batch(self, step: int) -> torch.Tensor:
        rng = np.random.default_rng(step_seed(self.config.seed, step))
        index = rng.integers(0, len(self.corpus.segments), size=self.optim.batch_size)
        return torch.from_numpy(self.corpus.segments[index].astype(np.float32)).to(self.device)

    def train_step(self, state: TrainState) -> Dict[str, float]:
        step = state.step + 1
        real = self.batch(step)
        with torch.no_grad():
            features = self.frontend.features(real, self.input_kind)
        augment_rng = torch.Generator().manual_seed(step_seed(state.seed, step))
        draw = draw_augmentation(real.shape[0], self.config.da, augment_rng)

        state.model.train()
        fake = state.model(features)

        state.d_optimizer.zero_grad(set_to_none=True)
        d_loss = self.criterion.discriminator_loss(real, fake, draw)
        d_loss.backward()
        state.d_optimizer.step()
        state.update_log.append("D")

        state.optimizer.zero_grad(set_to_none=True)
        g_loss, parts = self.criterion.generator_loss(real, fake, draw)
        g_loss.backward()
        state.optimizer.step()
        state.update_log.append("G")

        return {
            "loss": float(g_loss),
            "discriminator_loss": float(d_loss),
            **{k: float(v) for k, v in parts.items()},
        }


def build_generator(stage: str, config: GlobalConfig) -> nn.Module:
    if stage == "vocos2d":
        return Vocos2DGenerator(config.vocos2d, config.spectral)
    if stage == "vocos-baseline":
        return BaselineVocosGenerator(config.vocos, config.spectral)
    raise ValueError(f"not a vocoder stage: {stage}")


def train_lse(corpus: LseCorpus, config: GlobalConfig, steps: int, run_dir: Union[str, Path],
              resume: bool = False, device: Union[str, torch.device] = "cpu",
              progress: Optional[ProgressCallback] = None) -> TrainState:
    return LseTrainer(corpus, config, run_dir, device, progress).fit(steps, resume)


def train_vocoder(corpus: AudioCorpus, config: GlobalConfig, stage: str, steps: int, run_dir: Union[str, Path],
                  resume: bool = False, device: Union[str, torch.device] = "cpu",
                  progress: Optional[ProgressCallback] = None) -> TrainState:
    return VocoderTrainer(corpus, config, stage, run_dir, device, progress).fit(steps, resume)
