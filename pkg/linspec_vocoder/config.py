"""Configuration sections, defaults and their provenance."""

from dataclasses import dataclass, field, fields, asdict, replace
from typing import Dict, Optional, List, Any, Tuple, Union
import hashlib
import json
import logging
import math
import os
from pathlib import Path

from .errors import ConfigurationError

logger = logging.getLogger(__name__)

# Provenance labels shown by --help
PUBLISHED = "published"
DECISION = "decision"

ENV_CACHE_DIR = "LINSPEC_CACHE_DIR"
ENV_CHECKPOINT_DIR = "LINSPEC_CHECKPOINT_DIR"

INPUT_KINDS = ("mel", "linear")
STAGES = ("lse", "vocos2d", "vocos-baseline")


def _opt(default: Any, origin: str, help: str, factory: bool = False):
    """Dataclass field carrying its provenance and a one-line description."""
    metadata = {"origin": origin, "help": help}
    if factory:
        return field(default_factory=default, metadata=metadata)
    return field(default=default, metadata=metadata)


@dataclass
class SpectralConfig:
    """DSP front-end settings shared by every stage."""

    sample_rate: int = _opt(44100, PUBLISHED, "Sample rate in Hz after ingestion")
    frames_per_second: int = _opt(50, PUBLISHED, "Spectrogram frame rate")
    fft_size: int = _opt(2048, DECISION, "FFT size in samples")
    window_size: int = _opt(2048, DECISION, "Hann window length in samples")
    n_mel: int = _opt(80, PUBLISHED, "Number of Slaney mel filter banks")
    mel_f_max: float = _opt(8000.0, DECISION, "Mel spectrogram cut-off frequency in Hz")
    n_linear: int = _opt(592, PUBLISHED, "Number of linear filter banks up to Nyquist")
    amplitude_floor: float = _opt(1e-5, DECISION, "Minimum pooled magnitude before the log")
    norm_mean: Union[float, List[float]] = _opt(0.0, DECISION, "Normalization mean (scalar or per-bin)")
    norm_std: Union[float, List[float]] = _opt(1.0, DECISION, "Normalization std (scalar or per-bin)")
    per_bin_stats: bool = _opt(False, DECISION, "Compute per-frequency normalization vectors")

    @property
    def hop(self) -> int:
        return self.sample_rate // self.frames_per_second

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    @property
    def n_freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def loudness_floor(self) -> float:
        return math.log(self.amplitude_floor)

    @property
    def delta_f(self) -> float:
        from .spectral import linear_hop
        return linear_hop(self.mel_f_max, self.n_mel)

    def validate(self) -> "SpectralConfig":
        if self.hop * self.frames_per_second != self.sample_rate:
            raise ConfigurationError(
                f"hop {self.hop} x {self.frames_per_second} frames/s does not equal sample rate {self.sample_rate}"
            )
        if self.window_size > self.fft_size:
            raise ConfigurationError(f"window_size {self.window_size} exceeds fft_size {self.fft_size}")
        if self.hop >= self.window_size:
            raise ConfigurationError(f"hop {self.hop} must be shorter than window_size {self.window_size}")
        if not 0 < self.mel_f_max <= self.nyquist:
            raise ConfigurationError(f"mel_f_max {self.mel_f_max} must lie in (0, {self.nyquist}]")
        if self.amplitude_floor <= 0:
            raise ConfigurationError("amplitude_floor must be positive")
        expected = math.floor(self.nyquist / self.delta_f)
        if self.n_linear != expected:
            raise ConfigurationError(
                f"n_linear {self.n_linear} inconsistent with delta_f {self.delta_f:.4f} Hz "
                f"(floor(nyquist / delta_f) = {expected})"
            )
        return self

    def fingerprint(self, include_stats: bool = False) -> bytes:
        """16-byte identity of the DSP-defining fields (and optionally the statistics)."""
        keys = ["sample_rate", "frames_per_second", "fft_size", "window_size",
                "n_mel", "mel_f_max", "n_linear", "amplitude_floor"]
        if include_stats:
            keys += ["norm_mean", "norm_std", "per_bin_stats"]
        payload = {k: getattr(self, k) for k in keys}
        return hashlib.md5(json.dumps(payload, sort_keys=True).encode("utf-8")).digest()

    def with_stats(self, mean: Union[float, List[float]], std: Union[float, List[float]]) -> "SpectralConfig":
        return replace(self, norm_mean=mean, norm_std=std)


@dataclass
class LseConfig:
    """Linear Spectrogram Estimation network geometry."""

    n_blocks: int = _opt(8, PUBLISHED, "Backbone blocks")
    n_heads: int = _opt(8, PUBLISHED, "Self-attention heads")
    hidden: int = _opt(320, PUBLISHED, "Hidden width")
    patch_t: int = _opt(2, DECISION, "Patch extent in frames")
    patch_f: int = _opt(8, DECISION, "Patch extent in linear bins")
    n_linear: int = _opt(592, PUBLISHED, "Linear bins of the denoising target")
    n_mel: int = _opt(80, PUBLISHED, "Mel bins of the condition")
    ffn_expand: int = _opt(4, DECISION, "Feed-forward expansion ratio")
    cond_layers: int = _opt(2, DECISION, "Projection+GELU stages of the condition encoder")
    timestep_freq_dim: int = _opt(256, DECISION, "Sinusoidal width of the timestep embedding")

    @property
    def f_tokens(self) -> int:
        return self.n_linear // self.patch_f

    def validate(self) -> "LseConfig":
        if self.n_linear % self.patch_f:
            raise ConfigurationError(f"n_linear {self.n_linear} not divisible by patch_f {self.patch_f}")
        if self.hidden % self.n_heads:
            raise ConfigurationError(f"hidden {self.hidden} not divisible by n_heads {self.n_heads}")
        if self.n_blocks < 1 or self.cond_layers < 1:
            raise ConfigurationError("n_blocks and cond_layers must be >= 1")
        return self


@dataclass
class Vocos2DConfig:
    """Vocos2D generator geometry."""

    n_blocks: int = _opt(24, PUBLISHED, "Backbone blocks")
    hidden: int = _opt(256, PUBLISHED, "Hidden channels")
    depthwise_kernel: Tuple[int, int] = _opt((7, 7), DECISION, "Depthwise kernel (time, freq)")
    bottleneck_expand: int = _opt(3, DECISION, "Inverted bottleneck expansion ratio")
    out_bins: int = _opt(1025, DECISION, "STFT bins produced by the head (fft_size/2+1)")
    freq_grid: int = _opt(37, DECISION, "Frequency positions inside the generator")
    input_bins: int = _opt(592, PUBLISHED, "Bins of the input spectrogram")
    input_kind: str = _opt("linear", PUBLISHED, "Input feature kind (mel or linear)")
    layer_scale_init: Optional[float] = _opt(None, DECISION, "Initial gamma; None means 1/n_blocks")

    def validate(self, spectral: Optional[SpectralConfig] = None) -> "Vocos2DConfig":
        if self.n_blocks < 1:
            raise ConfigurationError("n_blocks must be >= 1")
        if self.freq_grid < 2:
            raise ConfigurationError("freq_grid must be >= 2")
        if self.input_kind not in INPUT_KINDS:
            raise ConfigurationError(f"input_kind must be one of {INPUT_KINDS}")
        if spectral is not None:
            if self.out_bins != spectral.n_freq_bins:
                raise ConfigurationError(f"out_bins {self.out_bins} != fft_size/2+1 = {spectral.n_freq_bins}")
            expected = spectral.n_linear if self.input_kind == "linear" else spectral.n_mel
            if self.input_bins != expected:
                raise ConfigurationError(f"input_bins {self.input_bins} != {expected} for {self.input_kind} input")
        return self


@dataclass
class BaselineVocosConfig:
    """Baseline 1D Vocos generator geometry."""

    n_blocks: int = _opt(10, PUBLISHED, "Backbone blocks")
    hidden: int = _opt(512, PUBLISHED, "Hidden channels")
    bottleneck_expand: int = _opt(3, DECISION, "Inverted bottleneck expansion ratio")
    kernel: int = _opt(7, DECISION, "Depthwise kernel length")
    out_bins: int = _opt(1025, DECISION, "STFT bins produced by the head")
    input_bins: int = _opt(80, PUBLISHED, "Bins of the input spectrogram")
    input_kind: str = _opt("mel", PUBLISHED, "Input feature kind (mel or linear)")
    layer_scale_init: Optional[float] = _opt(None, DECISION, "Initial gamma; None means 1/n_blocks")

    def validate(self, spectral: Optional[SpectralConfig] = None) -> "BaselineVocosConfig":
        if self.n_blocks < 1:
            raise ConfigurationError("n_blocks must be >= 1")
        if self.input_kind not in INPUT_KINDS:
            raise ConfigurationError(f"input_kind must be one of {INPUT_KINDS}")
        if spectral is not None:
            if self.out_bins != spectral.n_freq_bins:
                raise ConfigurationError(f"out_bins {self.out_bins} != fft_size/2+1 = {spectral.n_freq_bins}")
            expected = spectral.n_linear if self.input_kind == "linear" else spectral.n_mel
            if self.input_bins != expected:
                raise ConfigurationError(f"input_bins {self.input_bins} != {expected} for {self.input_kind} input")
        return self


@dataclass
class DAConfig:
    """Differentiable discriminator augmentation."""

    enabled: bool = _opt(True, PUBLISHED, "Apply augmentation before the discriminator")
    loudness_range_db: float = _opt(6.0, PUBLISHED, "Gain drawn uniformly in +/- this many dB")
    max_shift: int = _opt(882, DECISION, "Largest circular shift in samples")

    def validate(self, segment_samples: Optional[int] = None) -> "DAConfig":
        if not 0 <= self.loudness_range_db <= 6.0:
            raise ConfigurationError("loudness_range_db must lie in [0, 6]")
        if self.max_shift < 0:
            raise ConfigurationError("max_shift must be >= 0")
        if segment_samples is not None and self.max_shift >= segment_samples:
            raise ConfigurationError(f"max_shift {self.max_shift} must be shorter than the clip ({segment_samples})")
        return self


@dataclass
class DiscriminatorConfig:
    """Multi-resolution discriminator settings; no period-based sub-discriminators exist."""

    resolutions: List[Tuple[int, int, int]] = _opt(
        lambda: [(2048, 512, 2048), (1024, 256, 1024), (512, 128, 512)], DECISION,
        "(fft_size, hop, window) per sub-discriminator", factory=True,
    )
    channels: int = _opt(32, DECISION, "Channels of each conv stage")
    weights: Optional[List[float]] = _opt(None, DECISION, "Per-resolution loss weights (None = all 1)")

    def validate(self) -> "DiscriminatorConfig":
        if len(set(tuple(r) for r in self.resolutions)) < 2:
            raise ConfigurationError("the multi-resolution discriminator needs at least 2 distinct resolutions")
        if self.weights is not None and len(self.weights) != len(self.resolutions):
            raise ConfigurationError("one weight per resolution is required")
        return self


@dataclass
class LossWeights:
    mel: float = _opt(45.0, DECISION, "Mel-spectrogram L1 weight")
    feature_matching: float = _opt(1.0, DECISION, "Feature-matching L1 weight")
    adversarial: float = _opt(1.0, DECISION, "Adversarial hinge weight")


@dataclass
class OptimConfig:
    """AdamW settings plus per-stage batch geometry."""

    lr_init: float = _opt(1e-4, PUBLISHED, "Initial learning rate")
    betas: Tuple[float, float] = _opt((0.9, 0.999), DECISION, "AdamW betas")
    weight_decay: float = _opt(0.01, DECISION, "AdamW weight decay")
    eps: float = _opt(1e-8, DECISION, "AdamW epsilon")
    precision: str = _opt("fp32", PUBLISHED, "fp16 (mixed, dynamic loss scale) or fp32")
    batch_size: int = _opt(4, DECISION, "Desk-scale batch size")
    segment_seconds: float = _opt(8.0, PUBLISHED, "Training segment duration")
    steps: int = _opt(2000, DECISION, "Desk-scale training steps")
    full_scale_steps: int = _opt(1_200_000, PUBLISHED, "Full-scale step count")
    full_scale_batch_size: int = _opt(18, PUBLISHED, "Full-scale batch size")
    ema_decay: float = _opt(0.999, PUBLISHED, "EMA decay of checkpointed weights")
    checkpoint_every: int = _opt(500, DECISION, "Steps between checkpoints")

    def validate(self) -> "OptimConfig":
        if self.lr_init <= 0:
            raise ConfigurationError("lr_init must be positive")
        if self.precision not in ("fp16", "fp32"):
            raise ConfigurationError("precision must be fp16 or fp32")
        if not 0.0 <= self.ema_decay <= 1.0:
            raise ConfigurationError("ema_decay must lie in [0, 1]")
        return self


def lse_optim_defaults() -> OptimConfig:
    return OptimConfig(lr_init=1e-4, precision="fp16", segment_seconds=8.0,
                       full_scale_steps=1_200_000, full_scale_batch_size=18)


def vocoder_optim_defaults() -> OptimConfig:
    return OptimConfig(lr_init=5e-4, betas=(0.8, 0.9), precision="fp32", segment_seconds=4.0,
                       full_scale_steps=900_000, full_scale_batch_size=16)


def classifier_optim_defaults() -> OptimConfig:
    return OptimConfig(lr_init=1e-3, precision="fp32", segment_seconds=4.0, batch_size=8, steps=500,
                       full_scale_steps=500, full_scale_batch_size=8)


@dataclass
class ScheduleConfig:
    """Learning-rate schedule: plateau halving (LSE) or exponential decay (vocoders)."""

    mode: str = _opt("plateau_halving", PUBLISHED, "plateau_halving or exponential")
    window: int = _opt(150_000, PUBLISHED, "Steps without a new minimum before halving")
    decay_rate: float = _opt(0.995, PUBLISHED, "Exponential decay factor per interval")
    decay_interval: int = _opt(1000, DECISION, "Steps per exponential decay interval")
    smoothing_half_life: int = _opt(1000, DECISION, "Half-life in steps of the smoothed plateau loss")

    def validate(self) -> "ScheduleConfig":
        if self.mode not in ("plateau_halving", "exponential"):
            raise ConfigurationError(f"unknown schedule mode: {self.mode}")
        if self.window < 1 or self.decay_interval < 1:
            raise ConfigurationError("window and decay_interval must be >= 1")
        if not 0 < self.decay_rate <= 1:
            raise ConfigurationError("decay_rate must lie in (0, 1]")
        return self


@dataclass
class DiffusionConfig:
    n_steps: int = _opt(1000, DECISION, "Forward-process steps")
    beta_start: float = _opt(1e-4, DECISION, "First beta of the linear schedule")
    beta_end: float = _opt(0.02, DECISION, "Last beta of the linear schedule")
    n_sample_steps: int = _opt(32, PUBLISHED, "DPM++ 2M Karras sampling steps")
    rho: float = _opt(7.0, DECISION, "Karras ladder exponent")
    sigma_min: Optional[float] = _opt(None, DECISION, "Smallest sigma (None = schedule minimum)")
    sigma_max: Optional[float] = _opt(None, DECISION, "Largest sigma (None = schedule maximum)")


@dataclass
class ClassifierConfig:
    """ConvNeXt spectrogram realism classifier."""

    n_blocks: int = _opt(8, PUBLISHED, "ConvNeXt blocks in total")
    downsampling_ratios: List[int] = _opt(lambda: [4, 4, 2, 2], PUBLISHED, "Per-stage downsampling", factory=True)
    stage_blocks: List[int] = _opt(lambda: [2, 2, 2, 2], DECISION, "Blocks per stage", factory=True)
    channels: List[int] = _opt(lambda: [32, 64, 96, 128], DECISION, "Channels per stage", factory=True)
    input_kind: str = _opt("linear_filterbank", PUBLISHED, "raw_log_magnitude or linear_filterbank")
    crop_seconds: float = _opt(4.0, DECISION, "Training crop duration")

    @property
    def total_downsampling(self) -> int:
        return int(math.prod(self.downsampling_ratios))

    def validate(self) -> "ClassifierConfig":
        if self.input_kind not in ("raw_log_magnitude", "linear_filterbank"):
            raise ConfigurationError(f"unknown classifier input kind: {self.input_kind}")
        if len(self.downsampling_ratios) != 4 or len(self.stage_blocks) != 4 or len(self.channels) != 4:
            raise ConfigurationError("classifier needs exactly 4 stages")
        if sum(self.stage_blocks) != self.n_blocks:
            raise ConfigurationError(f"stage_blocks {self.stage_blocks} do not sum to n_blocks {self.n_blocks}")
        return self


@dataclass
class PathsConfig:
    cache_dir: str = _opt("work/cache", DECISION, "Manifest, statistics and feature caches")
    checkpoint_dir: str = _opt("work/checkpoints", DECISION, "Checkpoint root")


@dataclass
class DataConfig:
    """Ingestion settings."""

    test_ratio: float = _opt(0.1, DECISION, "Fraction of clips held out as the test split")
    max_workers: int = _opt(4, DECISION, "Parallel workers for ingestion and caching")

    def validate(self) -> "DataConfig":
        if not 0.0 <= self.test_ratio < 1.0:
            raise ConfigurationError("test_ratio must lie in [0, 1)")
        if self.max_workers < 1:
            raise ConfigurationError("max_workers must be >= 1")
        return self


# Section name -> default factory
SECTIONS: Dict[str, Any] = {
    "spectral": SpectralConfig,
    "lse": LseConfig,
    "vocos2d": Vocos2DConfig,
    "vocos": BaselineVocosConfig,
    "da": DAConfig,
    "discriminator": DiscriminatorConfig,
    "loss_weights": LossWeights,
    "optim_lse": lse_optim_defaults,
    "optim_vocoder": vocoder_optim_defaults,
    "optim_classifier": classifier_optim_defaults,
    "schedule_lse": ScheduleConfig,
    "schedule_vocoder": lambda: ScheduleConfig(mode="exponential"),
    "diffusion": DiffusionConfig,
    "classifier": ClassifierConfig,
    "paths": PathsConfig,
    "data": DataConfig,
}

# OptimConfig and ScheduleConfig are shared by several sections; these keys differ in provenance per section
SECTION_ORIGINS: Dict[str, Dict[str, str]] = {
    "optim_vocoder": {"precision": DECISION, "full_scale_batch_size": DECISION},
    "optim_classifier": {
        "lr_init": DECISION, "precision": DECISION, "segment_seconds": DECISION,
        "full_scale_steps": DECISION, "full_scale_batch_size": DECISION, "ema_decay": DECISION,
    },
    "schedule_lse": {"decay_rate": DECISION},
    "schedule_vocoder": {"window": DECISION},
}


def field_origin(section: str, name: str) -> str:
    """Provenance of one key as shown by --help."""
    overrides = SECTION_ORIGINS.get(section, {})
    if name in overrides:
        return overrides[name]
    field_map = {f.name: f for f in fields(SECTIONS[section]())}
    return field_map[name].metadata.get("origin", DECISION)

# Sections a checkpoint of each stage depends on
STAGE_SECTIONS: Dict[str, List[str]] = {
    "lse": ["spectral", "lse", "diffusion"],
    "vocos2d": ["spectral", "vocos2d"],
    "vocos-baseline": ["spectral", "vocos"],
    "classifier": ["spectral", "classifier"],
}


@dataclass
class GlobalConfig:
    """Every section of the configuration document."""

    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    lse: LseConfig = field(default_factory=LseConfig)
    vocos2d: Vocos2DConfig = field(default_factory=Vocos2DConfig)
    vocos: BaselineVocosConfig = field(default_factory=BaselineVocosConfig)
    da: DAConfig = field(default_factory=DAConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    optim_lse: OptimConfig = field(default_factory=lse_optim_defaults)
    optim_vocoder: OptimConfig = field(default_factory=vocoder_optim_defaults)
    optim_classifier: OptimConfig = field(default_factory=classifier_optim_defaults)
    schedule_lse: ScheduleConfig = field(default_factory=ScheduleConfig)
    schedule_vocoder: ScheduleConfig = field(default_factory=lambda: ScheduleConfig(mode="exponential"))
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GlobalConfig":
        config = cls()
        for name, values in data.items():
            if name == "seed":
                config.seed = int(values)
                continue
            if name not in SECTIONS:
                raise ConfigurationError(f"Unknown config section: {name}. Available: {sorted(SECTIONS) + ['seed']}")
            if not isinstance(values, dict):
                raise ConfigurationError(f"Config section {name} must be an object")
            setattr(config, name, _merge_section(getattr(config, name), values, name))
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "GlobalConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Config file {path} is not valid JSON: {e}")
        return cls.from_dict(data)

    def apply_environment(self, environ: Optional[Dict[str, str]] = None) -> "GlobalConfig":
        """Environment variables may only relocate the cache and checkpoint roots."""
        environ = os.environ if environ is None else environ
        if environ.get(ENV_CACHE_DIR):
            self.paths.cache_dir = environ[ENV_CACHE_DIR]
        if environ.get(ENV_CHECKPOINT_DIR):
            self.paths.checkpoint_dir = environ[ENV_CHECKPOINT_DIR]
        return self

    def apply_overrides(self, overrides: List[str]) -> "GlobalConfig":
        """Apply `section.key=value` overrides; values are parsed as JSON when possible."""
        for item in overrides:
            if "=" not in item or "." not in item.split("=", 1)[0]:
                raise ConfigurationError(f"Override must look like section.key=value: {item}")
            dotted, raw = item.split("=", 1)
            section, key = dotted.split(".", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if section not in SECTIONS:
                raise ConfigurationError(f"Unknown config section: {section}")
            setattr(self, section, _merge_section(getattr(self, section), {key: value}, section))
        return self

    def with_input_kind(self, stage: str, kind: str) -> "GlobalConfig":
        """Point a vocoder stage at mel or linear input, keeping input_bins consistent."""
        if kind not in INPUT_KINDS:
            raise ConfigurationError(f"input kind must be one of {INPUT_KINDS}, got {kind}")
        bins = self.spectral.n_mel if kind == "mel" else self.spectral.n_linear
        if stage == "vocos2d":
            self.vocos2d = replace(self.vocos2d, input_kind=kind, input_bins=bins)
        elif stage == "vocos-baseline":
            self.vocos = replace(self.vocos, input_kind=kind, input_bins=bins)
        else:
            raise ConfigurationError(f"stage {stage} has no selectable input kind")
        return self

    def input_kind_for(self, stage: str) -> str:
        if stage == "vocos2d":
            return self.vocos2d.input_kind
        if stage == "vocos-baseline":
            return self.vocos.input_kind
        return "mel"

    def validate(self) -> "GlobalConfig":
        self.spectral.validate()
        self.lse.validate()
        self.vocos2d.validate(self.spectral)
        self.vocos.validate(self.spectral)
        self.da.validate(int(self.optim_vocoder.segment_seconds * self.spectral.sample_rate))
        self.discriminator.validate()
        for optim in (self.optim_lse, self.optim_vocoder, self.optim_classifier):
            optim.validate()
        self.schedule_lse.validate()
        self.schedule_vocoder.validate()
        self.classifier.validate()
        self.data.validate()
        if self.lse.n_linear != self.spectral.n_linear or self.lse.n_mel != self.spectral.n_mel:
            raise ConfigurationError("lse.n_linear / lse.n_mel must match the spectral section")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return json.loads(json.dumps(asdict(self)))

    def stage_manifest(self, stage: str) -> Dict[str, Any]:
        """The configuration subset a checkpoint of `stage` depends on."""
        if stage not in STAGE_SECTIONS:
            raise ConfigurationError(f"Unknown stage: {stage}")
        full = self.to_dict()
        return {name: full[name] for name in STAGE_SECTIONS[stage]}

    def fingerprint_for(self, stage: str) -> str:
        manifest = self.stage_manifest(stage)
        return hashlib.md5(json.dumps(manifest, sort_keys=True).encode("utf-8")).hexdigest()


def _coerce(default: Any, value: Any) -> Any:
    """Give JSON values the shape of the dataclass default (lists back to tuples)."""
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, list) and default and isinstance(default[0], tuple) and isinstance(value, list):
        return [tuple(v) for v in value]
    return value


def _merge_section(current: Any, values: Dict[str, Any], name: str) -> Any:
    known = {f.name: f for f in fields(current)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigurationError(f"Unknown key(s) in config section {name}: {', '.join(unknown)}")
    updates = {k: _coerce(getattr(current, k), v) for k, v in values.items()}
    return replace(current, **updates)


def diff_manifests(saved: Dict[str, Any], active: Dict[str, Any]) -> List[str]:
    """Human-readable list of `section.key: saved -> active` differences."""
    differences = []
    for section in sorted(set(saved) | set(active)):
        left = saved.get(section, {}) or {}
        right = active.get(section, {}) or {}
        for key in sorted(set(left) | set(right)):
            if left.get(key) != right.get(key):
                differences.append(f"{section}.{key}: {left.get(key)!r} -> {right.get(key)!r}")
    return differences


def describe_config_keys() -> str:
    """Every config key with its default and provenance, for --help."""
    lines = []
    defaults = GlobalConfig()
    for name in SECTIONS:
        section = getattr(defaults, name)
        lines.append(f"  [{name}]")
        for f in fields(section):
            origin = field_origin(name, f.name)
            help_text = f.metadata.get("help", "")
            lines.append(f"    {f.name} = {getattr(section, f.name)!r}  ({origin}) {help_text}")
    lines.append(f"  seed = {defaults.seed!r}  ({DECISION}) Global random seed")
    return "\n".join(lines)
